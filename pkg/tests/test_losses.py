"""Objective components: arithmetic identities, gate schedule, adaptive weight."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from inkalign.errors import ContractViolation, ShapeMismatch
from inkalign.losses import (
    FeatureStackBackbone,
    LossConfig,
    adaptive_weight,
    discriminator_objective,
    gate,
    generator_objective,
    l1_loss,
    perceptual_loss,
)

CFG = LossConfig()

# value of the fixed-seed backbone on the frozen random pair below,
# computed once and pinned
PERCEPTUAL_GOLDEN = 0.12545724213123322


@pytest.fixture(scope="module")
def backbone():
    return FeatureStackBackbone()


def _pair(seed=2024, shape=(1, 3, 32, 32)):
    gen = torch.Generator().manual_seed(seed)
    y = torch.rand(shape, generator=gen) * 2 - 1
    y_hat = torch.rand(shape, generator=gen) * 2 - 1
    return y, y_hat


# --- l1 ----------------------------------------------------------------------


def test_l1_identity_is_zero():
    y, _ = _pair()
    assert l1_loss(y, y).item() == 0.0


def test_l1_constant_images():
    a = torch.full((1, 3, 4, 4), 0.5)
    b = torch.full((1, 3, 4, 4), 0.25)
    assert l1_loss(a, b).item() == pytest.approx(0.25, abs=1e-7)


def test_l1_matches_elementwise_oracle():
    y, y_hat = _pair(seed=3)
    expected = np.abs(y.numpy() - y_hat.numpy()).sum() / y.numel()
    assert l1_loss(y, y_hat).item() == pytest.approx(expected, abs=1e-7)


def test_l1_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        l1_loss(torch.zeros((1, 3, 4, 4)), torch.zeros((1, 3, 4, 5)))


# --- perceptual ---------------------------------------------------------------


def test_perceptual_identity_is_zero(backbone):
    y, _ = _pair()
    assert perceptual_loss(y, y, backbone, CFG).item() == 0.0


def test_perceptual_zero_weight(backbone):
    y, y_hat = _pair()
    cfg = LossConfig(lambda_p=0.0)
    assert perceptual_loss(y, y_hat, backbone, cfg).item() == 0.0


def test_perceptual_golden_value(backbone):
    y, y_hat = _pair()
    assert perceptual_loss(y, y_hat, backbone, CFG).item() == pytest.approx(
        PERCEPTUAL_GOLDEN, abs=1e-7
    )


def test_backbone_metric_properties(backbone):
    y, y_hat = _pair(seed=11)
    d_ab = backbone(y, y_hat).item()
    d_ba = backbone(y_hat, y).item()
    assert d_ab >= 0.0
    assert d_ab == pytest.approx(d_ba, abs=1e-7)


# --- gate ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "step,expected",
    [(0, 0), (10000, 0), (10001, 1), (10002, 1)],
)
def test_gate_threshold(step, expected):
    assert gate(step, CFG) == expected


def test_gate_rejects_negative_step():
    with pytest.raises(ContractViolation):
        gate(-1, CFG)


# --- adaptive weight ------------------------------------------------------------


def test_adaptive_weight_equal_norms():
    assert adaptive_weight(1.0, 1.0, CFG) == pytest.approx(0.49995, abs=1e-6)


def test_adaptive_weight_double_rec_norm():
    assert adaptive_weight(2.0, 1.0, CFG) == pytest.approx(1.0, abs=1e-3)


def test_adaptive_weight_clamped():
    # vanishing adversarial gradient: delta keeps the ratio finite, the
    # clip bounds it
    assert adaptive_weight(1.0, 0.0, CFG) == pytest.approx(0.5 / CFG.delta)
    assert adaptive_weight(10.0, 0.0, CFG) == CFG.adaptive_clip


def test_adaptive_weight_rejects_negative_norms():
    with pytest.raises(ContractViolation):
        adaptive_weight(-1.0, 1.0, CFG)
    with pytest.raises(ContractViolation):
        adaptive_weight(1.0, -1.0, CFG)


@given(
    a=st.floats(0.5, 50.0),
    b=st.floats(0.5, 50.0),
    s=st.floats(0.5, 20.0),
)
@settings(max_examples=60, deadline=None)
def test_adaptive_weight_scale_free_far_from_delta(a, b, s):
    # homogeneity of degree zero up to the delta stabilizer
    w1 = adaptive_weight(a, b, CFG)
    w2 = adaptive_weight(s * a, s * b, CFG)
    assert w2 == pytest.approx(w1, rel=1e-3)


# --- generator objective --------------------------------------------------------


def test_total_is_l1_plus_perceptual_before_gate(backbone):
    y, y_hat = _pair(seed=21)
    total, bd = generator_objective(y, y_hat, None, step=0, backbone=backbone,
                                    grad_norms=None, cfg=CFG)
    expected = l1_loss(y, y_hat) + perceptual_loss(y, y_hat, backbone, CFG)
    assert total.item() == expected.item()
    assert bd.gate == 0
    assert bd.adv_gen == 0.0
    assert bd.total_gen == total.item()


def test_identical_pair_gives_zero_total_before_gate(backbone):
    y, _ = _pair(seed=23)
    total, bd = generator_objective(y, y, None, step=0, backbone=backbone,
                                    grad_norms=None, cfg=CFG)
    assert total.item() == 0.0
    assert bd.total_gen == 0.0


def test_gated_total_composes_verified_parts(backbone):
    y, y_hat = _pair(seed=25)
    fake = torch.full((1, 1, 3, 3), -0.5)
    cfg = LossConfig(lambda_psi_start=10)
    total, bd = generator_objective(
        y, y_hat, fake, step=10, backbone=backbone, grad_norms=(2.0, 1.0), cfg=cfg
    )
    l1 = l1_loss(y, y_hat).item()
    lp = perceptual_loss(y, y_hat, backbone, cfg).item()
    weight = adaptive_weight(2.0, 1.0, cfg)
    adv = weight * 0.5  # -mean(fake) = 0.5
    assert bd.gate == 1
    assert bd.adaptive_weight == pytest.approx(weight)
    assert bd.adv_gen == pytest.approx(adv, rel=1e-6)
    assert total.item() == pytest.approx(l1 + lp + adv, rel=1e-6)
    assert bd.total_gen == pytest.approx(bd.l1 + bd.perceptual + bd.adv_gen, rel=1e-6)


def test_open_gate_requires_logits_and_norms(backbone):
    y, y_hat = _pair(seed=27)
    cfg = LossConfig(lambda_psi_start=0)
    with pytest.raises(ContractViolation):
        generator_objective(y, y_hat, None, step=5, backbone=backbone,
                            grad_norms=None, cfg=cfg)


def test_total_requires_grad_flows(backbone):
    y, y_hat = _pair(seed=29)
    y_hat = y_hat.requires_grad_(True)
    total, _ = generator_objective(y, y_hat, None, step=0, backbone=backbone,
                                   grad_norms=None, cfg=CFG)
    total.backward()
    assert y_hat.grad is not None
    assert torch.isfinite(y_hat.grad).all()


# --- discriminator objective -----------------------------------------------------


def test_disc_objective_zero_before_gate():
    real = torch.randn((1, 1, 3, 3))
    fake = torch.randn((1, 1, 3, 3))
    assert discriminator_objective(real, fake, step=0, cfg=CFG).item() == 0.0


def test_disc_objective_at_zero_logits():
    z = torch.zeros((1, 1, 3, 3))
    cfg = LossConfig(lambda_psi_start=1)
    assert discriminator_objective(z, z, step=1, cfg=cfg).item() == 1.0


def test_disc_objective_satisfied_margins():
    cfg = LossConfig(lambda_psi_start=1)
    real = torch.ones((1, 1, 2, 2))
    fake = -torch.ones((1, 1, 2, 2))
    assert discriminator_objective(real, fake, step=5, cfg=cfg).item() == 0.0
