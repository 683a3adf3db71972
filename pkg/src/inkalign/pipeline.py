"""Training loop, inference orchestration, evaluation, and gradient checks.

Training runs two optimizers over one model pair: the generator update only
ever touches the auxiliary encoder, decoder, and skip projections (the main
encoder is frozen), and the critic update only touches critic parameters.
The adversarial terms join the objective only once the warm-up gate opens.

Everything random is derived from ``(config.seed, purpose, step)``, so a
checkpoint-resume at any step continues bit-identically to an uninterrupted
run.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

import yaml

from . import colorspace
from .checkpoint import (
    config_hash,
    digest_module,
    load_checkpoint,
    optimizer_from_tensors,
    optimizer_to_tensors,
    save_checkpoint,
)
from .data import DatasetManifest, batch_entry_ids, load_image, synthesize_pair
from .discriminator import (
    DiscriminatorConfig,
    PatchDiscriminator,
    build_discriminator,
    gen_adv_score,
)
from .errors import CheckpointError, ContractViolation, DatasetError, PriorError
from .generator import (
    AlignmentVAE,
    GeneratorConfig,
    build_generator,
    plane_to_tensor,
    sample_latent,
    stack_to_tensor,
    tensor_to_stack,
)
from .hints import HintSet
from .imagetypes import BlendWeight, ImagePlane, ImageStack, as_blend_weight
from .losses import (
    FeatureStackBackbone,
    LossBreakdown,
    LossConfig,
    PerceptualBackbone,
    adaptive_weight,
    discriminator_objective,
    gate,
    generator_objective,
    l1_loss,
    perceptual_loss,
)
from .priors import DegradationConfig, RoughColorPrior, ShadingPrior
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 4.5e-6
    beta1: float = 0.9
    beta2: float = 0.5
    weight_decay: float = 1e-2
    batch_size: int = 4
    max_steps: int = 1000
    checkpoint_interval: int = 500
    seed: int = 0
    resize_to: int = 512
    crop_size: int = 256
    mixed_precision: bool = False
    adaptive_norm_source: str = "weights"  # or "activations"
    disc_base_channels: int = 64
    loss: LossConfig = field(default_factory=LossConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ContractViolation("learning_rate must be positive, batch_size >= 1")
        if self.max_steps < 0 or self.checkpoint_interval < 1:
            raise ContractViolation("max_steps >= 0 and checkpoint_interval >= 1 required")
        if self.crop_size % self.generator.downsample_factor:
            raise ContractViolation(
                f"crop_size {self.crop_size} not divisible by the generator's "
                f"downsample factor {self.generator.downsample_factor}"
            )
        if self.adaptive_norm_source not in ("weights", "activations"):
            raise ContractViolation("adaptive_norm_source must be 'weights' or 'activations'")

    # --- config file round trip (plain YAML with exactly these field names) ---

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        nested = {
            "loss": LossConfig,
            "generator": GeneratorConfig,
            "degradation": DegradationConfig,
        }
        for key, sub_cls in nested.items():
            if key in doc and isinstance(doc[key], dict):
                sub = dict(doc[key])
                if "channel_multipliers" in sub:
                    sub["channel_multipliers"] = tuple(sub["channel_multipliers"])
                doc[key] = sub_cls(**sub)
        return cls(**doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


@dataclass
class TrainState:
    config: TrainConfig
    model: AlignmentVAE
    disc: PatchDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    backbone: PerceptualBackbone
    step: int = 0
    frozen_encoder_digest: str = ""


def init_state(config: TrainConfig) -> TrainState:
    model = build_generator(config.generator, seed=derive_seed(config.seed, "generator-init"))
    disc = build_discriminator(
        DiscriminatorConfig(base_channels=config.disc_base_channels),
        seed=derive_seed(config.seed, "discriminator-init"),
    )
    opt_g = torch.optim.AdamW(
        list(model.trainable_parameters()),
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        weight_decay=config.weight_decay,
    )
    opt_d = torch.optim.AdamW(
        list(disc.parameters()),
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        weight_decay=config.weight_decay,
    )
    backbone = FeatureStackBackbone()
    return TrainState(
        config=config, model=model, disc=disc, opt_g=opt_g, opt_d=opt_d,
        backbone=backbone, step=0,
        frozen_encoder_digest=digest_module(model.encoder),
    )


def _measure_adaptive_norms(
    rec_loss: torch.Tensor, adv_score: torch.Tensor, target: torch.Tensor
) -> tuple[float, float]:
    (g_rec,) = torch.autograd.grad(rec_loss, target, retain_graph=True)
    (g_adv,) = torch.autograd.grad(adv_score, target, retain_graph=True)
    return float(g_rec.norm()), float(g_adv.norm())


def train_step(
    state: TrainState, batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
) -> tuple[LossBreakdown, bool]:
    """One optimization step over a batch of (y, x_col, x_g) tensors.

    Mutates the state's modules and optimizers in place and increments the
    step counter once. On a non-finite loss, parameters and optimizer state
    stay untouched, the step still advances, and the second return value is
    True (diagnostic record).
    """
    cfg = state.config
    y, x_col, x_g = batch
    s = state.step + 1  # 1-based global step being executed
    g = gate(s, cfg.loss)

    noise_seed = derive_seed(cfg.seed, "latent-noise", s)

    capture: dict[str, torch.Tensor] = {}
    hook = None
    if g and cfg.adaptive_norm_source == "activations":
        hook = state.model.last_decoder_layer().register_forward_hook(
            lambda _m, _inp, out: capture.__setitem__("out", out)
        )
    try:
        with torch.autocast("cpu", dtype=torch.bfloat16, enabled=cfg.mixed_precision):
            y_hat = state.model(x_col, x_g, mode="train", seed=noise_seed)
    finally:
        if hook is not None:
            hook.remove()

    fake_logits = None
    norms = None
    if g:
        fake_logits = state.disc(y_hat)
        rec_probe = l1_loss(y, y_hat) + perceptual_loss(y, y_hat, state.backbone, cfg.loss)
        adv_probe = gen_adv_score(fake_logits)
        if cfg.adaptive_norm_source == "weights":
            target = state.model.last_decoder_layer().weight
        else:
            target = capture["out"]
        norms = _measure_adaptive_norms(rec_probe, adv_probe, target)

    total, breakdown = generator_objective(
        y, y_hat, fake_logits, s, state.backbone, norms, cfg.loss
    )

    if not torch.isfinite(total):
        log.warning("step %d: non-finite generator loss, skipping updates", s)
        state.step = s
        return breakdown, True

    disc_loss = None
    if g:
        real_logits = state.disc(y)
        fake_detached = state.disc(y_hat.detach())
        disc_loss = discriminator_objective(real_logits, fake_detached, s, cfg.loss)
        breakdown.adv_disc = float(disc_loss.detach())
        if not torch.isfinite(disc_loss):
            log.warning("step %d: non-finite critic loss, skipping updates", s)
            state.step = s
            return breakdown, True

    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()

    if disc_loss is not None:
        state.opt_d.zero_grad(set_to_none=True)
        disc_loss.backward()
        state.opt_d.step()

    state.step = s
    return breakdown, False


# --- checkpoint wiring ---------------------------------------------------------


def _state_tensors(state: TrainState) -> dict[str, torch.Tensor]:
    tensors: dict[str, torch.Tensor] = {}
    for key, tensor in state.model.state_dict().items():
        tensors[f"generator.{key}"] = tensor
    for key, tensor in state.disc.state_dict().items():
        tensors[f"discriminator.{key}"] = tensor
    for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        opt_tensors, _ = optimizer_to_tensors(opt)
        for key, tensor in opt_tensors.items():
            tensors[f"{prefix}.{key}"] = tensor
    return tensors


def save_train_checkpoint(state: TrainState, path: str | Path) -> Path:
    encoder_digest = digest_module(state.model.encoder)
    if state.frozen_encoder_digest and encoder_digest != state.frozen_encoder_digest:
        raise CheckpointError("frozen encoder drifted during training; refusing to save")
    _, opt_g_meta = optimizer_to_tensors(state.opt_g)
    _, opt_d_meta = optimizer_to_tensors(state.opt_d)
    return save_checkpoint(
        path,
        step=state.step,
        config=state.config.to_dict(),
        tensors=_state_tensors(state),
        frozen_digests={"generator.encoder": encoder_digest},
        extras={"optimizers": {"opt_g": opt_g_meta, "opt_d": opt_d_meta}},
    )


def load_train_checkpoint(path: str | Path) -> TrainState:
    manifest, tensors = load_checkpoint(path)
    config = TrainConfig.from_dict(manifest.config)
    state = init_state(config)

    gen_sd = {k[len("generator."):]: v for k, v in tensors.items() if k.startswith("generator.")}
    disc_sd = {
        k[len("discriminator."):]: v for k, v in tensors.items() if k.startswith("discriminator.")
    }
    state.model.load_state_dict(gen_sd, strict=True)
    state.model.encoder.requires_grad_(False)
    state.disc.load_state_dict(disc_sd, strict=True)

    metas = manifest.extras.get("optimizers", {})
    for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        opt_tensors = {
            k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(f"{prefix}.")
        }
        if opt_tensors or metas.get(prefix, {}).get("state_scalars"):
            optimizer_from_tensors(opt, opt_tensors, metas[prefix])

    state.step = manifest.step
    state.frozen_encoder_digest = manifest.frozen_digests.get(
        "generator.encoder", digest_module(state.model.encoder)
    )
    current = digest_module(state.model.encoder)
    if current != state.frozen_encoder_digest:
        raise CheckpointError(
            "restored encoder does not match the checkpoint's frozen digest"
        )
    return state


def load_inference_model(path: str | Path) -> AlignmentVAE:
    """Rebuild just the generator from a checkpoint (no optimizers/critic)."""
    manifest, tensors = load_checkpoint(path)
    config = TrainConfig.from_dict(manifest.config)
    model = build_generator(config.generator)
    gen_sd = {k[len("generator."):]: v for k, v in tensors.items() if k.startswith("generator.")}
    model.load_state_dict(gen_sd, strict=True)
    model.encoder.requires_grad_(False)
    model.eval()
    return model


# --- training loop ---------------------------------------------------------------


def _batch_tensors(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    step_index: int,
    cache: dict[str, ImageStack],
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    entry_ids = batch_entry_ids(manifest, cfg.batch_size, step_index, cfg.seed)
    ys, cols, gs = [], [], []
    for slot, entry_id in enumerate(entry_ids):
        if entry_id not in cache:
            cache[entry_id] = load_image(manifest.path_of(entry_id))
        crop_seed = derive_seed(cfg.seed, "crop", step_index, slot, entry_id)
        deg = dataclasses.replace(
            cfg.degradation,
            seed=derive_seed(cfg.degradation.seed, "degrade", step_index, slot, entry_id),
        )
        pair = synthesize_pair(
            cache[entry_id], deg, crop_seed, source_id=entry_id,
            resize_to=cfg.resize_to, crop_size=cfg.crop_size,
        ).check_divisible(cfg.generator.downsample_factor)
        ys.append(stack_to_tensor(pair.y_true))
        cols.append(stack_to_tensor(pair.x_col))
        gs.append(plane_to_tensor(pair.x_g))
    return torch.cat(ys), torch.cat(cols), torch.cat(gs)


def train(
    config: TrainConfig,
    manifest: DatasetManifest,
    *,
    workdir: str | Path,
    resume_from: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainState:
    """Run the training loop to ``max_steps`` with periodic checkpoints.

    Checkpoints land in ``workdir`` as ``step_{N}.ckpt`` every
    ``checkpoint_interval`` steps (and at the final step). The per-step loss
    breakdown is appended to ``log_path`` as JSON lines.
    """
    if not manifest.train_ids:
        raise DatasetError("manifest has no training entries")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    state = load_train_checkpoint(resume_from) if resume_from else init_state(config)

    log_file = open(log_path, "a") if log_path else None
    cache: dict[str, ImageStack] = {}
    try:
        while state.step < config.max_steps:
            batch = _batch_tensors(manifest, config, state.step, cache)
            breakdown, aborted = train_step(state, batch)
            if log_file:
                record = {"step": state.step, "aborted": aborted, **breakdown.as_record()}
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if state.step % config.checkpoint_interval == 0 or state.step == config.max_steps:
                ckpt = workdir / f"step_{state.step:08d}.ckpt"
                try:
                    save_train_checkpoint(state, ckpt)
                except OSError as exc:
                    raise CheckpointError(
                        f"checkpoint write failed at step {state.step}: {exc}"
                    ) from exc
    finally:
        if log_file:
            log_file.close()
    if state.step == config.max_steps and not (workdir / f"step_{state.step:08d}.ckpt").exists():
        save_train_checkpoint(state, workdir / f"step_{state.step:08d}.ckpt")
    return state


# --- inference --------------------------------------------------------------------


@dataclass
class InferenceRequest:
    page: ImagePlane
    hints: HintSet | None = None
    reference: ImageStack | None = None
    lambda_ab: BlendWeight = field(default_factory=BlendWeight)
    deterministic: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        self.lambda_ab = as_blend_weight(self.lambda_ab)


@dataclass
class ColorizeResult:
    y: ImageStack
    x_g: ImagePlane
    x_col: ImageStack
    y_hat: ImageStack


def _run_prior(fn, stage: str, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PriorError as exc:
        exc.stage = stage
        raise
    except Exception as exc:
        err = PriorError(f"{stage} prior failed: {exc}")
        err.stage = stage
        raise err from exc


def colorize(
    request: InferenceRequest,
    shading_prior: ShadingPrior,
    rough_prior: RoughColorPrior,
    model: AlignmentVAE,
) -> ColorizeResult:
    """Full inference pass: priors, alignment forward, CIELAB chroma blend."""
    page = request.page
    x_col = _run_prior(rough_prior, "rough_color", page,
                       hints=request.hints, reference=request.reference)
    x_g = _run_prior(shading_prior, "shading", page)
    for produced, name in ((x_col, "rough_color"), (x_g, "shading")):
        if (produced.height, produced.width) != (page.height, page.width):
            err = PriorError(f"{name} prior changed dimensions")
            err.stage = name
            raise err

    with torch.no_grad():
        if request.deterministic:
            y_hat_t = model(stack_to_tensor(x_col), plane_to_tensor(x_g),
                            mode="deterministic")
        else:
            y_hat_t = model(stack_to_tensor(x_col), plane_to_tensor(x_g),
                            mode="train", seed=derive_seed(request.seed, "inference"))
    y_hat = tensor_to_stack(y_hat_t)

    y_hat_lab = colorspace.rgb_to_lab(y_hat)
    x_col_lab = colorspace.rgb_to_lab(x_col)
    blended = colorspace.blend_chroma(y_hat_lab, x_col_lab, request.lambda_ab)
    y = colorspace.lab_to_rgb(blended)
    return ColorizeResult(y=y, x_g=x_g, x_col=x_col, y_hat=y_hat)


def evaluate(
    model: AlignmentVAE,
    manifest: DatasetManifest,
    deg_cfg: DegradationConfig,
    *,
    backbone: PerceptualBackbone | None = None,
    split: str = "eval",
    resize_to: int = 512,
    crop_size: int = 256,
) -> dict:
    """Mean L1 (unit range) and perceptual distance between the blended
    output at lambda=0 and ground truth over a manifest split."""
    ids = manifest.eval_ids if split == "eval" else manifest.train_ids
    if not ids:
        raise DatasetError(f"manifest has an empty {split} split")
    backbone = backbone or FeatureStackBackbone()
    l1_total, percep_total = 0.0, 0.0
    for entry_id in ids:
        img = load_image(manifest.path_of(entry_id))
        pair = synthesize_pair(
            img, deg_cfg, derive_seed(0, "eval-crop", entry_id), source_id=entry_id,
            resize_to=resize_to, crop_size=crop_size,
        ).check_divisible(model.config.downsample_factor)
        request = InferenceRequest(page=pair.x_g, lambda_ab=BlendWeight(0.0))
        result = colorize(
            request,
            shading_prior=_FixedPlane(pair.x_g),
            rough_prior=_FixedStack(pair.x_col),
            model=model,
        )
        l1_total += float(np.abs(result.y.data - pair.y_true.data).mean())
        with torch.no_grad():
            percep_total += float(
                backbone(stack_to_tensor(pair.y_true), stack_to_tensor(result.y))
            )
    n = len(ids)
    return {"count": n, "mean_l1": l1_total / n, "mean_perceptual": percep_total / n}


class _FixedPlane:
    """Shading prior returning a precomputed plane (evaluation plumbing)."""

    name = "fixed-plane"

    def __init__(self, plane: ImagePlane):
        self._plane = plane

    def __call__(self, page: ImagePlane) -> ImagePlane:
        return self._plane


class _FixedStack:
    name = "fixed-stack"

    def __init__(self, stack: ImageStack):
        self._stack = stack

    def __call__(self, page, hints=None, reference=None) -> ImageStack:
        return self._stack


# --- gradient checking --------------------------------------------------------------


def gradcheck(
    gen_config: GeneratorConfig | None = None,
    *,
    resolution: int = 16,
    step_size: float = 1e-5,
    seed: int = 0,
) -> dict:
    """Compare autograd gradient norms at the final decoder layer against
    central finite differences, for both the reconstruction losses and the
    adversarial score. Runs in float64 on a tiny model."""
    cfg = gen_config or GeneratorConfig(
        base_channels=8, channel_multipliers=(1, 1, 2, 2),
        latent_channels=4, downsample_factor=8, input_resolution=resolution,
    )
    model = build_generator(cfg, seed=derive_seed(seed, "gradcheck-gen")).double()
    disc = build_discriminator(
        DiscriminatorConfig(base_channels=8), seed=derive_seed(seed, "gradcheck-disc")
    ).double()
    backbone = FeatureStackBackbone().double()

    gen_rng = torch.Generator().manual_seed(derive_seed(seed, "gradcheck-data"))
    y = torch.rand((1, 3, resolution, resolution), generator=gen_rng, dtype=torch.float64) * 2 - 1
    x_col = torch.rand((1, 3, resolution, resolution), generator=gen_rng, dtype=torch.float64) * 2 - 1
    x_g = torch.rand((1, 1, resolution, resolution), generator=gen_rng, dtype=torch.float64) * 2 - 1

    weight = model.last_decoder_layer().weight

    def rec_scalar() -> torch.Tensor:
        y_hat = model(x_col, x_g, mode="deterministic")
        return l1_loss(y, y_hat) + perceptual_loss(y, y_hat, backbone, LossConfig())

    def adv_scalar() -> torch.Tensor:
        y_hat = model(x_col, x_g, mode="deterministic")
        return gen_adv_score(disc(y_hat))

    report = {}
    for name, fn in (("rec", rec_scalar), ("adv", adv_scalar)):
        value = fn()
        (grad_ad,) = torch.autograd.grad(value, weight)
        grad_fd = torch.zeros_like(weight)
        flat = weight.data.view(-1)
        fd_flat = grad_fd.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step_size
                hi = fn().item()
                flat[i] = original - step_size
                lo = fn().item()
                flat[i] = original
                fd_flat[i] = (hi - lo) / (2.0 * step_size)
        norm_ad = float(grad_ad.norm())
        norm_fd = float(grad_fd.norm())
        rel = abs(norm_ad - norm_fd) / max(norm_fd, 1e-12)
        report[f"{name}_norm_ad"] = norm_ad
        report[f"{name}_norm_fd"] = norm_fd
        report[f"{name}_rel_err"] = rel
    report["max_rel_err"] = max(report["rec_rel_err"], report["adv_rel_err"])
    report["adaptive_weight_ad"] = adaptive_weight(
        report["rec_norm_ad"], report["adv_norm_ad"], LossConfig()
    )
    report["adaptive_weight_fd"] = adaptive_weight(
        report["rec_norm_fd"], report["adv_norm_fd"], LossConfig()
    )
    return report
