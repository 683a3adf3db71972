"""Alignment VAE: shape arithmetic, frozen path, zero-conditioning, sampling."""

import numpy as np
import pytest
import torch

from inkalign.errors import ContractViolation, ShapeMismatch
from inkalign.generator import (
    AlignmentVAE,
    GeneratorConfig,
    LatentDistribution,
    build_generator,
    sample_latent,
)

TINY = GeneratorConfig(
    base_channels=8,
    channel_multipliers=(1, 1, 2, 2),
    latent_channels=4,
    downsample_factor=8,
    input_resolution=64,
)


@pytest.fixture(scope="module")
def model() -> AlignmentVAE:
    return build_generator(TINY, seed=101)


def _inputs(h=64, w=64, seed=0, batch=1):
    gen = torch.Generator().manual_seed(seed)
    x_col = torch.rand((batch, 3, h, w), generator=gen) * 2 - 1
    x_g = torch.rand((batch, 1, h, w), generator=gen) * 2 - 1
    return x_col, x_g


# --- config invariants -------------------------------------------------------


def test_config_rejects_wrong_factor():
    with pytest.raises(ContractViolation):
        GeneratorConfig(channel_multipliers=(1, 2, 4, 4), downsample_factor=4)


def test_config_default_matches_reference_geometry():
    cfg = GeneratorConfig()
    assert cfg.downsample_factor == 8
    assert cfg.latent_channels == 4
    assert cfg.input_resolution == 256


# --- encode ------------------------------------------------------------------


def test_encode_produces_eighth_resolution_grids(model):
    x_col, _ = _inputs(64, 64)
    dist = model.encode(x_col)
    assert dist.mean.shape == (1, 4, 8, 8)
    assert dist.log_variance.shape == (1, 4, 8, 8)


def test_encode_256_geometry():
    cfg = GeneratorConfig(base_channels=4, channel_multipliers=(1, 1, 1, 1))
    m = build_generator(cfg, seed=3)
    x = torch.zeros((1, 3, 256, 256))
    dist = m.encode(x)
    assert dist.mean.shape == (1, 4, 32, 32)


def test_encode_rejects_indivisible_dims(model):
    with pytest.raises(ContractViolation):
        model.encode(torch.zeros((1, 3, 60, 64)))


def test_encode_deterministic(model):
    x_col, _ = _inputs(seed=5)
    a = model.encode(x_col)
    b = model.encode(x_col)
    assert torch.equal(a.mean, b.mean)
    assert torch.equal(a.log_variance, b.log_variance)


def test_encoder_parameters_are_frozen(model):
    assert all(not p.requires_grad for p in model.encoder.parameters())
    assert any(p.requires_grad for p in model.aux_encoder.parameters())
    assert any(p.requires_grad for p in model.decoder.parameters())


# --- sample_latent -----------------------------------------------------------


def _dist(shape=(1, 4, 8, 8), log_var=0.0, seed=9):
    gen = torch.Generator().manual_seed(seed)
    mean = torch.randn(shape, generator=gen)
    return LatentDistribution(mean, torch.full(shape, log_var))


def test_deterministic_sampling_returns_mean_exactly():
    dist = _dist()
    z = sample_latent(dist, deterministic=True)
    assert torch.equal(z, dist.mean)


def test_unit_sigma_adds_noise_directly():
    dist = _dist(log_var=0.0)
    noise = torch.randn(dist.mean.shape, generator=torch.Generator().manual_seed(2))
    z = sample_latent(dist, noise=noise)
    assert torch.allclose(z, dist.mean + noise)


def test_seeded_sampling_is_reproducible():
    dist = _dist()
    assert torch.equal(sample_latent(dist, seed=77), sample_latent(dist, seed=77))
    assert not torch.equal(sample_latent(dist, seed=77), sample_latent(dist, seed=78))


def test_sampling_shape_mismatch_rejected():
    dist = _dist()
    with pytest.raises(ShapeMismatch):
        sample_latent(dist, noise=torch.zeros((1, 4, 4, 4)))


def test_sampling_requires_a_source():
    with pytest.raises(ContractViolation):
        sample_latent(_dist())


# --- encode_aux / skip projections -------------------------------------------


def test_fresh_projections_emit_all_zero_skips(model):
    _, x_g = _inputs(seed=13)
    skips = model.encode_aux(x_g)
    assert len(skips) == 3
    for grid in skips.grids:
        assert torch.count_nonzero(grid) == 0


def test_skip_grid_resolutions(model):
    _, x_g = _inputs(64, 64)
    skips = model.encode_aux(x_g)
    # coarse -> full: 1/4, 1/2, 1/1 of input, channel widths mirror the decoder
    assert [tuple(g.shape) for g in skips.grids] == [
        (1, 16, 16, 16),
        (1, 16, 32, 32),
        (1, 8, 64, 64),
    ]


def test_nonzero_projections_respond_to_input():
    m = build_generator(TINY, seed=55)
    with torch.no_grad():
        for proj in m.aux_encoder.projections:
            proj.weight.add_(0.05)
    a = m.encode_aux(_inputs(seed=1)[1])
    b = m.encode_aux(_inputs(seed=2)[1])
    assert any(not torch.equal(x, y) for x, y in zip(a.grids, b.grids))


# --- decode ------------------------------------------------------------------


def test_zero_skipstack_is_additive_identity(model):
    x_col, x_g = _inputs(seed=21)
    dist = model.encode(x_col)
    z = sample_latent(dist, deterministic=True)
    zero_skips = model.encode_aux(x_g)  # fresh projections: all zero
    manual_zero = type(zero_skips)([torch.zeros_like(g) for g in zero_skips.grids])
    assert torch.equal(model.decode(z, zero_skips), model.decode(z, manual_zero))


def test_decode_shape(model):
    z = torch.randn((1, 4, 8, 8), generator=torch.Generator().manual_seed(4))
    skips = model.encode_aux(_inputs()[1])
    assert model.decode(z, skips).shape == (1, 3, 64, 64)


def test_decode_sensitive_to_skip_perturbation(model):
    z = torch.randn((1, 4, 8, 8), generator=torch.Generator().manual_seed(4))
    skips = model.encode_aux(_inputs()[1])
    bumped = type(skips)([g.clone() for g in skips.grids])
    bumped.grids[1] = bumped.grids[1] + 0.5
    assert not torch.equal(model.decode(z, skips), model.decode(z, bumped))


def test_decode_rejects_misaligned_skips(model):
    z = torch.randn((1, 4, 8, 8))
    skips = model.encode_aux(_inputs()[1])
    bad = type(skips)([g[:, :, :-1, :] for g in skips.grids])
    with pytest.raises(ShapeMismatch):
        model.decode(z, bad)
    with pytest.raises(ShapeMismatch):
        model.decode(z, type(skips)(skips.grids[:2]))


# --- forward -----------------------------------------------------------------


def test_zero_conditioning_at_init(model):
    x_col, _ = _inputs(seed=31)
    _, g1 = _inputs(seed=32)
    _, g2 = _inputs(seed=33)
    y1 = model(x_col, g1, mode="deterministic")
    y2 = model(x_col, g2, mode="deterministic")
    assert (y1 - y2).abs().max().item() <= 1e-6


def test_forward_deterministic_mode_repeats(model):
    x_col, x_g = _inputs(seed=41)
    assert torch.equal(
        model(x_col, x_g, mode="deterministic"), model(x_col, x_g, mode="deterministic")
    )


def test_forward_matches_explicit_composition(model):
    x_col, x_g = _inputs(seed=43)
    direct = model(x_col, x_g, mode="deterministic")
    dist = model.encode(x_col)
    composed = model.decode(sample_latent(dist, deterministic=True), model.encode_aux(x_g))
    assert torch.equal(direct, composed)


def test_output_shape_follows_input_shape(model):
    for h, w in ((64, 64), (32, 64), (64, 96)):
        x_col, x_g = _inputs(h, w)
        assert model(x_col, x_g).shape == (1, 3, h, w)


def test_forward_train_mode_uses_noise(model):
    x_col, x_g = _inputs(seed=47)
    a = model(x_col, x_g, mode="train", seed=1)
    b = model(x_col, x_g, mode="train", seed=1)
    c = model(x_col, x_g, mode="train", seed=2)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_output_in_signed_range(model):
    x_col, x_g = _inputs(seed=51)
    y = model(x_col, x_g)
    assert y.min().item() >= -1.0 and y.max().item() <= 1.0


def test_build_is_reproducible_and_leaves_global_rng_alone():
    state = torch.random.get_rng_state()
    m1 = build_generator(TINY, seed=7)
    m2 = build_generator(TINY, seed=7)
    assert torch.equal(state, torch.random.get_rng_state())
    for p1, p2 in zip(m1.parameters(), m2.parameters()):
        assert torch.equal(p1, p2)
