"""Multi-encoder alignment VAE.

Three parts share one latent geometry (spatial downsample factor ``f``,
``latent_channels`` channels):

* a main encoder over the rough-colored input, frozen after construction,
  producing a per-pixel-grid Gaussian posterior;
* an auxiliary encoder over the shaded-grayscale input whose features reach
  the decoder through zero-initialized 1x1 projections, so conditioning has
  no effect at initialization and is learned gradually;
* a decoder that turns a latent sample into an RGB image, adding each
  projected grayscale feature grid to the output of the matching upsampling
  block.

Tensors are NCHW float32 in the signed model range [-1, 1]; conversion
helpers to and from the tagged raster types live at the bottom.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor, nn

from .errors import ContractViolation, ShapeMismatch
from .imagetypes import RANGE_UNIT, ImagePlane, ImageStack

LOG_VAR_CLAMP = 20.0  # posterior log-variance kept in [-20, 20] for stable exp


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 4, 4)
    latent_channels: int = 4
    downsample_factor: int = 8
    input_resolution: int = 256

    def __post_init__(self) -> None:
        levels = len(self.channel_multipliers)
        if levels < 2:
            raise ContractViolation("need at least two resolution levels")
        if self.downsample_factor != 2 ** (levels - 1):
            raise ContractViolation(
                f"downsample_factor must be 2^(levels-1) = {2 ** (levels - 1)}, "
                f"got {self.downsample_factor}"
            )
        if self.latent_channels < 1:
            raise ContractViolation("latent_channels must be >= 1")
        if self.input_resolution % self.downsample_factor != 0:
            raise ContractViolation("input_resolution must be divisible by downsample_factor")

    @property
    def levels(self) -> int:
        return len(self.channel_multipliers)

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_multipliers)


@dataclass
class LatentDistribution:
    """Per-grid-cell Gaussian posterior: mean and log-variance at 1/f resolution."""

    mean: Tensor
    log_variance: Tensor

    def __post_init__(self) -> None:
        if self.mean.shape != self.log_variance.shape:
            raise ShapeMismatch(
                f"mean {tuple(self.mean.shape)} vs log_variance "
                f"{tuple(self.log_variance.shape)}"
            )
        if not torch.isfinite(self.log_variance).all():
            raise ContractViolation("log_variance contains non-finite values")


@dataclass
class SkipStack:
    """Projected grayscale features, one grid per decoder upsampling level.

    ``grids[k]`` is added to the output of the k-th upsampling block
    (k = 0 is the deepest level, the last grid is at full resolution).
    """

    grids: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.grids)


def _norm(channels: int) -> nn.GroupNorm:
    for groups in (8, 4, 2, 1):
        if channels % groups == 0:
            return nn.GroupNorm(groups, channels)
    return nn.GroupNorm(1, channels)


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.norm1 = _norm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm2 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(self.act(self.norm1(x)))
        h = self.conv2(self.act(self.norm2(h)))
        return self.skip(x) + h


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(nn.functional.interpolate(x, scale_factor=2.0, mode="nearest"))


class MainEncoder(nn.Module):
    """Downsampling path over the rough-colored input; emits the posterior."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        ch = cfg.channels
        self.conv_in = nn.Conv2d(3, ch[0], 3, padding=1)
        blocks: list[nn.Module] = []
        prev = ch[0]
        for i, c in enumerate(ch):
            blocks.append(ResidualBlock(prev, c))
            prev = c
            if i < cfg.levels - 1:
                blocks.append(Downsample(c))
        self.down = nn.Sequential(*blocks)
        self.mid = nn.Sequential(ResidualBlock(prev, prev), ResidualBlock(prev, prev))
        self.norm_out = _norm(prev)
        self.act = nn.SiLU()
        self.conv_out = nn.Conv2d(prev, 2 * cfg.latent_channels, 3, padding=1)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = self.mid(self.down(self.conv_in(x)))
        moments = self.conv_out(self.act(self.norm_out(h)))
        mean, log_var = torch.chunk(moments, 2, dim=1)
        return mean, torch.clamp(log_var, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)


class AuxEncoder(nn.Module):
    """Grayscale conditioning path: the main encoder's downsampling topology
    with the middle stack removed, tapped at each resolution the decoder's
    upsampling blocks emit. The deepest stage (below the shallowest tap) is
    omitted because no decoder injection point exists for it.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        ch = cfg.channels
        n_taps = cfg.levels - 1  # one per decoder upsampling block
        self.conv_in = nn.Conv2d(1, ch[0], 3, padding=1)
        self.blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = ch[0]
        for i in range(n_taps):
            self.blocks.append(ResidualBlock(prev, ch[i]))
            prev = ch[i]
            if i < n_taps - 1:
                self.downs.append(Downsample(prev))
        # zero-initialized 1x1 projections; projections[k] feeds decoder
        # upsampling level k (k = 0 is the deepest, coarsest level)
        decoder_widths = [ch[cfg.levels - 1 - k] for k in range(n_taps)]
        aux_widths = [ch[cfg.levels - 2 - k] for k in range(n_taps)]
        self.projections = nn.ModuleList(
            nn.Conv2d(aux_widths[k], decoder_widths[k], 1) for k in range(n_taps)
        )
        for proj in self.projections:
            nn.init.zeros_(proj.weight)
            nn.init.zeros_(proj.bias)

    def forward(self, x: Tensor) -> SkipStack:
        taps: list[Tensor] = []
        h = self.conv_in(x)
        for i, block in enumerate(self.blocks):
            h = block(h)
            taps.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        # taps are full -> coarse; decoder wants coarse -> full
        taps.reverse()
        return SkipStack([proj(t) for proj, t in zip(self.projections, taps)])


class Decoder(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        ch = cfg.channels
        top = ch[-1]
        self.conv_in = nn.Conv2d(cfg.latent_channels, top, 3, padding=1)
        self.mid = nn.Sequential(ResidualBlock(top, top), ResidualBlock(top, top))
        self.stages = nn.ModuleList()
        self.ups = nn.ModuleList()
        prev = top
        # stage k runs at 1/2^(levels-1-k) and upsamples to 1/2^(levels-2-k)
        self.skip_channels: list[int] = []
        for k in range(cfg.levels - 1):
            width = ch[cfg.levels - 1 - k]
            self.stages.append(ResidualBlock(prev, width))
            self.ups.append(Upsample(width))
            self.skip_channels.append(width)
            prev = width
        self.final_block = ResidualBlock(prev, ch[0])
        self.norm_out = _norm(ch[0])
        self.act = nn.SiLU()
        self.conv_out = nn.Conv2d(ch[0], 3, 3, padding=1)

    def forward(self, z: Tensor, skips: SkipStack) -> Tensor:
        if len(skips) != len(self.stages):
            raise ShapeMismatch(
                f"expected {len(self.stages)} skip grids, got {len(skips)}"
            )
        h = self.mid(self.conv_in(z))
        for k, (stage, up) in enumerate(zip(self.stages, self.ups)):
            h = up(stage(h))
            s = skips.grids[k]
            if s.shape != h.shape:
                raise ShapeMismatch(
                    f"skip {k} shape {tuple(s.shape)} does not match decoder "
                    f"feature shape {tuple(h.shape)}"
                )
            h = h + s
        h = self.final_block(h)
        return torch.tanh(self.conv_out(self.act(self.norm_out(h))))


def sample_latent(
    dist: LatentDistribution,
    noise: Tensor | None = None,
    seed: int | None = None,
    deterministic: bool = False,
) -> Tensor:
    """Draw z = mean + exp(0.5 * log_variance) * eps.

    Deterministic mode returns the mean unchanged; otherwise ``noise`` is
    used verbatim or drawn from a generator seeded with ``seed``.
    """
    if deterministic:
        return dist.mean
    if noise is None:
        if seed is None:
            raise ContractViolation("provide noise, a seed, or deterministic=True")
        gen = torch.Generator().manual_seed(int(seed))
        noise = torch.randn(dist.mean.shape, generator=gen, dtype=dist.mean.dtype)
    if noise.shape != dist.mean.shape:
        raise ShapeMismatch(
            f"noise shape {tuple(noise.shape)} vs mean {tuple(dist.mean.shape)}"
        )
    return dist.mean + torch.exp(0.5 * dist.log_variance) * noise


class AlignmentVAE(nn.Module):
    """Frozen posterior over the rough-colored input, trainable grayscale
    conditioning and decoder. Inference on a built instance is read-only."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        self.encoder = MainEncoder(config)
        self.aux_encoder = AuxEncoder(config)
        self.decoder = Decoder(config)
        self.encoder.requires_grad_(False)

    def _check_dims(self, t: Tensor, what: str) -> None:
        f = self.config.downsample_factor
        if t.shape[-1] % f or t.shape[-2] % f:
            raise ContractViolation(
                f"{what} spatial dims {tuple(t.shape[-2:])} not divisible by {f}"
            )

    def encode(self, x_col: Tensor) -> LatentDistribution:
        """Posterior of the frozen path; (N,3,H,W) -> grids at 1/f resolution."""
        self._check_dims(x_col, "x_col")
        with torch.no_grad():
            mean, log_var = self.encoder(x_col)
        return LatentDistribution(mean, log_var)

    def encode_aux(self, x_g: Tensor) -> SkipStack:
        """(N,1,H,W) grayscale -> projected skip grids, coarse to full."""
        self._check_dims(x_g, "x_g")
        return self.aux_encoder(x_g)

    def decode(self, z: Tensor, skips: SkipStack) -> Tensor:
        return self.decoder(z, skips)

    def forward(
        self,
        x_col: Tensor,
        x_g: Tensor,
        mode: str = "deterministic",
        noise: Tensor | None = None,
        seed: int | None = None,
    ) -> Tensor:
        if mode not in ("train", "deterministic"):
            raise ContractViolation(f"unknown mode {mode!r}")
        if x_col.shape[-2:] != x_g.shape[-2:]:
            raise ShapeMismatch(
                f"x_col {tuple(x_col.shape[-2:])} vs x_g {tuple(x_g.shape[-2:])}"
            )
        dist = self.encode(x_col)
        if mode == "deterministic":
            z = sample_latent(dist, deterministic=True)
        else:
            z = sample_latent(dist, noise=noise, seed=seed)
        return self.decode(z, self.encode_aux(x_g))

    def trainable_modules(self) -> dict[str, nn.Module]:
        return {"aux_encoder": self.aux_encoder, "decoder": self.decoder}

    def trainable_parameters(self):
        for module in self.trainable_modules().values():
            yield from module.parameters()

    def last_decoder_layer(self) -> nn.Conv2d:
        """The output projection whose gradients anchor the adaptive weight."""
        return self.decoder.conv_out


def build_generator(config: GeneratorConfig, seed: int = 0) -> AlignmentVAE:
    """Construct with reproducible initialization, leaving global RNG untouched."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return AlignmentVAE(config)


# --- raster <-> tensor boundary ---------------------------------------------


def stack_to_tensor(stack: ImageStack) -> Tensor:
    """Unit-range sRGB stack -> (1, 3, H, W) float32 in [-1, 1]."""
    stack.require_space("sRGB")
    data = np.asarray(stack.data, dtype=np.float32)
    if stack.range_tag == RANGE_UNIT:
        data = data * 2.0 - 1.0
    return torch.from_numpy(np.ascontiguousarray(data.transpose(2, 0, 1)))[None]


def plane_to_tensor(plane: ImagePlane) -> Tensor:
    """Unit-range grayscale plane -> (1, 1, H, W) float32 in [-1, 1]."""
    data = np.asarray(plane.data, dtype=np.float32)
    if plane.range_tag == RANGE_UNIT:
        data = data * 2.0 - 1.0
    return torch.from_numpy(np.ascontiguousarray(data))[None, None]


def tensor_to_stack(t: Tensor) -> ImageStack:
    """(1, 3, H, W) or (3, H, W) signed tensor -> unit-range sRGB stack."""
    if t.dim() == 4:
        t = t[0]
    arr = t.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float64)
    arr = np.clip((arr + 1.0) / 2.0, 0.0, 1.0)
    return ImageStack(arr, space_tag="sRGB", range_tag=RANGE_UNIT)


def tensor_to_plane(t: Tensor) -> ImagePlane:
    if t.dim() == 4:
        t = t[0]
    if t.dim() == 3:
        t = t[0]
    arr = t.detach().cpu().numpy().astype(np.float64)
    arr = np.clip((arr + 1.0) / 2.0, 0.0, 1.0)
    return ImagePlane(arr, range_tag=RANGE_UNIT)
