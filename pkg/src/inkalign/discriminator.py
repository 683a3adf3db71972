"""Patch-based adversarial critic with a hinge objective.

The critic is fully convolutional: every output logit scores one 64x64
receptive-field patch of the input (three stride-2 convolutions plus a
stride-1 head, kernel sizes chosen so the field is exactly 64 pixels).
Scores are reduced by arithmetic mean so the losses are resolution-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import ContractViolation, ShapeMismatch

# (kernel, stride, padding) per layer; receptive field works out to 64
_LAYER_GEOMETRY = ((6, 2, 2), (4, 2, 1), (4, 2, 1), (6, 1, 2))


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3
    base_channels: int = 64


def patch_geometry() -> tuple[int, int, float]:
    """(receptive_field, stride, center_offset) of one output logit.

    Logit (i, j) sees input rows [i*stride + offset - rf/2, ...+ rf/2 - 1]
    and the analogous columns, intersected with the image.
    """
    rf, jump, start = 1, 1, 0.0
    for k, s, p in _LAYER_GEOMETRY:
        rf += (k - 1) * jump
        start += ((k - 1) / 2.0 - p) * jump
        jump *= s
    return rf, jump, start


class PatchDiscriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.config = config
        b = config.base_channels
        widths = (b, 2 * b, 4 * b)
        # no normalization layers: spatial statistics would couple every
        # logit to the whole image and break the per-patch locality contract
        layers: list[nn.Module] = []
        prev = config.in_channels
        for width, (k, s, p) in zip(widths, _LAYER_GEOMETRY[:3]):
            layers.append(nn.Conv2d(prev, width, k, stride=s, padding=p))
            layers.append(nn.LeakyReLU(0.2))
            prev = width
        k, s, p = _LAYER_GEOMETRY[3]
        layers.append(nn.Conv2d(prev, 1, k, stride=s, padding=p))
        self.net = nn.Sequential(*layers)

    def forward(self, img: Tensor) -> Tensor:
        """(N, 3, H, W) in model range -> (N, 1, h', w') patch logits."""
        if img.dim() != 4 or img.shape[1] != self.config.in_channels:
            raise ContractViolation(
                f"expected (N, {self.config.in_channels}, H, W), got {tuple(img.shape)}"
            )
        return self.net(img)

    def receptive_window(self, i: int, j: int) -> tuple[int, int, int, int]:
        """Inclusive input pixel bounds (r0, r1, c0, c1) that logit (i, j) sees."""
        rf, jump, start = patch_geometry()
        half = (rf - 1) / 2.0
        r0 = int(i * jump + start - half)
        r1 = int(i * jump + start + half)
        c0 = int(j * jump + start - half)
        c1 = int(j * jump + start + half)
        return r0, r1, c0, c1


def build_discriminator(
    config: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 0
) -> PatchDiscriminator:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return PatchDiscriminator(config)


def hinge_disc_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """0.5 * mean(relu(1 - real)) + 0.5 * mean(relu(1 + fake)).

    This is the critic's hinge objective before the warm-up gate is applied.
    """
    if real_logits.shape != fake_logits.shape:
        raise ShapeMismatch(
            f"real {tuple(real_logits.shape)} vs fake {tuple(fake_logits.shape)}"
        )
    return 0.5 * (
        torch.relu(1.0 - real_logits).mean() + torch.relu(1.0 + fake_logits).mean()
    )


def gen_adv_score(fake_logits: Tensor) -> Tensor:
    """Unweighted generator adversarial score: -mean(fake logits)."""
    return -fake_logits.mean()
