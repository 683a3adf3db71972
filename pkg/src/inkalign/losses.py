"""Training objective: L1 + perceptual + gated adversarial terms.

The adversarial term only participates after a configured global step (the
gate), and is balanced against the reconstruction terms by an adaptive
weight: the ratio of gradient norms of the two loss groups measured at the
final decoder layer, clamped from above. Because the main encoder is frozen
the objective carries no divergence term over the posterior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import torch
from torch import Tensor, nn

from .discriminator import gen_adv_score
from .errors import ContractViolation, ShapeMismatch


@dataclass(frozen=True)
class LossConfig:
    lambda_p: float = 1.0
    lambda_psi: float = 0.5
    delta: float = 1e-4
    lambda_psi_start: int = 10001
    adaptive_clip: float = 1e4

    def __post_init__(self) -> None:
        for name in ("lambda_p", "lambda_psi", "delta", "adaptive_clip"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be nonnegative")
        if self.lambda_psi_start < 0:
            raise ContractViolation("lambda_psi_start must be nonnegative")


@dataclass
class LossBreakdown:
    """Per-step record of every objective component."""

    l1: float
    perceptual: float
    adv_gen: float
    adv_disc: float
    gate: int
    adaptive_weight: float
    total_gen: float

    def as_record(self) -> dict:
        return {
            "l1": self.l1,
            "perceptual": self.perceptual,
            "adv_gen": self.adv_gen,
            "adv_disc": self.adv_disc,
            "gate": self.gate,
            "adaptive_weight": self.adaptive_weight,
            "total_gen": self.total_gen,
        }


@runtime_checkable
class PerceptualBackbone(Protocol):
    """Feature-distance callable: (y, y_hat) -> scalar tensor, with a tag."""

    tag: str

    def __call__(self, y: Tensor, y_hat: Tensor) -> Tensor: ...


class FeatureStackBackbone(nn.Module):
    """Deterministic, dependency-free perceptual distance for tests and
    desk-scale training: a fixed-seed convolutional feature stack with
    channel-normalized activations, compared by mean squared difference.

    Smooth everywhere (tanh activations) so finite-difference checks of
    gradients through it are well behaved.
    """

    tag = "feature-stack-v1"

    def __init__(self, seed: int = 0x5EED, widths: tuple[int, ...] = (8, 16, 16)):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            layers = []
            prev = 3
            for i, w in enumerate(widths):
                layers.append(nn.Conv2d(prev, w, 3, stride=1 if i == 0 else 2, padding=1))
                prev = w
            self.stages = nn.ModuleList(layers)
        self.requires_grad_(False)

    @staticmethod
    def _unit_normalize(feat: Tensor) -> Tensor:
        return feat / torch.sqrt((feat**2).sum(dim=1, keepdim=True) + 1e-8)

    def forward(self, y: Tensor, y_hat: Tensor) -> Tensor:
        if y.shape != y_hat.shape:
            raise ShapeMismatch(f"{tuple(y.shape)} vs {tuple(y_hat.shape)}")
        total = y.new_zeros(())
        a, b = y, y_hat
        for stage in self.stages:
            a = torch.tanh(stage(a))
            b = torch.tanh(stage(b))
            total = total + ((self._unit_normalize(a) - self._unit_normalize(b)) ** 2).mean()
        return total / len(self.stages)


class VggPerceptualBackbone(nn.Module):
    """Production backbone over pretrained VGG-16 features (LPIPS-style).

    Requires torchvision and downloadable weights; constructed lazily so the
    rest of the toolkit works without them.
    """

    tag = "vgg16-features"

    _TAPS = (3, 8, 15, 22)  # relu1_2, relu2_2, relu3_3, relu4_3

    def __init__(self):
        super().__init__()
        try:
            from torchvision.models import VGG16_Weights, vgg16
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise ContractViolation("torchvision is required for the VGG backbone") from exc
        self.features = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features.eval()
        self.requires_grad_(False)

    def forward(self, y: Tensor, y_hat: Tensor) -> Tensor:
        if y.shape != y_hat.shape:
            raise ShapeMismatch(f"{tuple(y.shape)} vs {tuple(y_hat.shape)}")
        total = y.new_zeros(())
        a, b = y, y_hat
        taps = set(self._TAPS)
        for idx, layer in enumerate(self.features):
            a = layer(a)
            b = layer(b)
            if idx in taps:
                na = FeatureStackBackbone._unit_normalize(a)
                nb = FeatureStackBackbone._unit_normalize(b)
                total = total + ((na - nb) ** 2).mean()
            if idx >= max(self._TAPS):
                break
        return total / len(self._TAPS)


def l1_loss(y: Tensor, y_hat: Tensor) -> Tensor:
    """Mean absolute difference (mean reduction over all elements)."""
    if y.shape != y_hat.shape:
        raise ShapeMismatch(f"{tuple(y.shape)} vs {tuple(y_hat.shape)}")
    return (y - y_hat).abs().mean()


def perceptual_loss(
    y: Tensor, y_hat: Tensor, backbone: PerceptualBackbone, cfg: LossConfig
) -> Tensor:
    return cfg.lambda_p * backbone(y, y_hat)


def gate(step: int, cfg: LossConfig) -> int:
    """1 once the global step reaches the adversarial warm-up threshold."""
    if step < 0:
        raise ContractViolation("step must be nonnegative")
    return 1 if step >= cfg.lambda_psi_start else 0


def adaptive_weight(grad_rec_norm: float, grad_adv_norm: float, cfg: LossConfig) -> float:
    """Balance coefficient for the generator's adversarial term.

    Both arguments are gradient norms taken at the final decoder layer: of
    the reconstruction losses (L1 + perceptual) and of the unweighted
    adversarial score. The ratio is scaled by ``lambda_psi``, stabilized by
    ``delta``, and clamped at ``adaptive_clip``.
    """
    if grad_rec_norm < 0 or grad_adv_norm < 0:
        raise ContractViolation("gradient norms must be nonnegative")
    value = cfg.lambda_psi * grad_rec_norm / (grad_adv_norm + cfg.delta)
    return min(value, cfg.adaptive_clip)


def generator_objective(
    y: Tensor,
    y_hat: Tensor,
    fake_logits: Tensor | None,
    step: int,
    backbone: PerceptualBackbone,
    grad_norms: tuple[float, float] | None,
    cfg: LossConfig,
) -> tuple[Tensor, LossBreakdown]:
    """Assemble the generator's total loss.

    Returns the differentiable total (L1 + perceptual + gated, adaptively
    weighted adversarial score) plus the numeric breakdown. ``fake_logits``
    and ``grad_norms`` may be None while the gate is closed; with the gate
    open both are required.
    """
    l1 = l1_loss(y, y_hat)
    lp = perceptual_loss(y, y_hat, backbone, cfg)
    g = gate(step, cfg)
    if g == 0:
        total = l1 + lp
        breakdown = LossBreakdown(
            l1=l1.detach().item(), perceptual=lp.detach().item(), adv_gen=0.0,
            adv_disc=0.0, gate=0, adaptive_weight=0.0,
            total_gen=total.detach().item(),
        )
        return total, breakdown
    if fake_logits is None or grad_norms is None:
        raise ContractViolation("gate is open: fake_logits and grad_norms are required")
    weight = adaptive_weight(grad_norms[0], grad_norms[1], cfg)
    adv = weight * g * gen_adv_score(fake_logits)
    total = l1 + lp + adv
    breakdown = LossBreakdown(
        l1=l1.detach().item(), perceptual=lp.detach().item(),
        adv_gen=adv.detach().item(), adv_disc=0.0, gate=1,
        adaptive_weight=weight, total_gen=total.detach().item(),
    )
    return total, breakdown


def discriminator_objective(
    real_logits: Tensor | None, fake_logits: Tensor | None, step: int, cfg: LossConfig
) -> Tensor:
    """Gated hinge objective for the critic; exactly zero while gated off."""
    from .discriminator import hinge_disc_loss

    if gate(step, cfg) == 0:
        return torch.zeros(())
    if real_logits is None or fake_logits is None:
        raise ContractViolation("gate is open: real and fake logits are required")
    return hinge_disc_loss(real_logits, fake_logits)
