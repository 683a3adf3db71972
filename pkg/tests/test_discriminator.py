"""Patch critic: geometry, locality, and hinge arithmetic."""

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from inkalign.discriminator import (
    DiscriminatorConfig,
    build_discriminator,
    gen_adv_score,
    hinge_disc_loss,
    patch_geometry,
)
from inkalign.errors import ContractViolation, ShapeMismatch

SMALL = DiscriminatorConfig(base_channels=16)


@pytest.fixture(scope="module")
def critic():
    return build_discriminator(SMALL, seed=11)


def test_receptive_field_is_64():
    rf, stride, _ = patch_geometry()
    assert rf == 64
    assert stride == 8


def test_score_grid_has_many_cells(critic):
    img = torch.rand((1, 3, 256, 256)) * 2 - 1
    logits = critic(img)
    assert logits.shape[-1] > 1 and logits.shape[-2] > 1
    assert torch.isfinite(logits).all()


def test_score_deterministic(critic):
    img = torch.rand((1, 3, 128, 128), generator=torch.Generator().manual_seed(5)) * 2 - 1
    assert torch.equal(critic(img), critic(img))


def test_wrong_channel_count_rejected(critic):
    with pytest.raises(ContractViolation):
        critic(torch.zeros((1, 1, 64, 64)))


def test_occlusion_outside_receptive_field_leaves_score_unchanged(critic):
    gen = torch.Generator().manual_seed(17)
    img = torch.rand((1, 3, 256, 256), generator=gen) * 2 - 1
    base = critic(img)
    h_out = base.shape[-2]
    i = j = h_out // 2
    r0, r1, c0, c1 = critic.receptive_window(i, j)

    # perturb a pixel safely outside that window
    poked = img.clone()
    poked[0, :, min(r1 + 16, 255), min(c1 + 16, 255)] = 1.0
    after = critic(poked)
    assert torch.equal(after[0, 0, i, j], base[0, 0, i, j])

    # sanity: perturbing inside the window does change the score
    poked_in = img.clone()
    rc = (max(r0, 0) + min(r1, 255)) // 2
    cc = (max(c0, 0) + min(c1, 255)) // 2
    poked_in[0, :, rc, cc] = 1.0
    assert not torch.equal(critic(poked_in)[0, 0, i, j], base[0, 0, i, j])


# --- hinge arithmetic ---------------------------------------------------------


def test_hinge_zero_when_margins_satisfied():
    real = torch.ones((2, 1, 4, 4))
    fake = -torch.ones((2, 1, 4, 4))
    assert hinge_disc_loss(real, fake).item() == 0.0


def test_hinge_at_zero_logits():
    z = torch.zeros((1, 1, 3, 3))
    assert hinge_disc_loss(z, z).item() == pytest.approx(1.0, abs=0.0)


def test_hinge_fully_fooled():
    real = -torch.ones((1, 1, 2, 2))
    fake = torch.ones((1, 1, 2, 2))
    assert hinge_disc_loss(real, fake).item() == pytest.approx(2.0, abs=0.0)


def test_hinge_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        hinge_disc_loss(torch.zeros((1, 1, 2, 2)), torch.zeros((1, 1, 3, 3)))


@given(
    real=st.floats(-3.0, 3.0),
    fake=st.floats(-3.0, 3.0),
)
@settings(max_examples=60, deadline=None)
def test_hinge_nonnegative_and_zero_iff_margins(real, fake):
    r = torch.full((1, 1, 2, 2), real)
    f = torch.full((1, 1, 2, 2), fake)
    loss = hinge_disc_loss(r, f).item()
    assert loss >= 0.0
    if real >= 1.0 and fake <= -1.0:
        assert loss == 0.0
    else:
        assert loss > 0.0


# --- generator adversarial score ----------------------------------------------


def test_gen_adv_score_values():
    assert gen_adv_score(torch.ones((1, 1, 2, 2))).item() == -1.0
    assert gen_adv_score(torch.zeros((1, 1, 2, 2))).item() == 0.0
    assert gen_adv_score(torch.full((1, 1, 2, 2), -2.0)).item() == 2.0


@given(a=st.floats(-4.0, 4.0), v=st.floats(-2.0, 2.0))
@settings(max_examples=40, deadline=None)
def test_gen_adv_score_linear(a, v):
    logits = torch.full((1, 1, 3, 3), v)
    assert gen_adv_score(a * logits).item() == pytest.approx(
        a * gen_adv_score(logits).item(), abs=1e-5
    )
