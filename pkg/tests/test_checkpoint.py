"""Checkpoint archive: bit-exact round trips, digests, optimizer state."""

import zipfile

import pytest
import torch

from inkalign.checkpoint import (
    config_hash,
    digest_named_tensors,
    load_checkpoint,
    optimizer_from_tensors,
    optimizer_to_tensors,
    save_checkpoint,
)
from inkalign.errors import CheckpointError


def _tensors(seed=0):
    gen = torch.Generator().manual_seed(seed)
    return {
        "model.weight": torch.randn((4, 3, 3, 3), generator=gen),
        "model.bias": torch.randn((4,), generator=gen),
        "counter": torch.arange(10, dtype=torch.int64),
    }


def test_round_trip_bit_exact(tmp_path):
    tensors = _tensors()
    path = save_checkpoint(
        tmp_path / "a.ckpt", step=12, config={"lr": 1e-3},
        tensors=tensors, frozen_digests={"enc": "abc"},
    )
    manifest, loaded = load_checkpoint(path)
    assert manifest.step == 12
    assert manifest.config == {"lr": 1e-3}
    assert manifest.config_hash == config_hash({"lr": 1e-3})
    assert manifest.frozen_digests == {"enc": "abc"}
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert torch.equal(loaded[name], tensors[name])
        assert loaded[name].dtype == tensors[name].dtype


def test_header_is_plain_text_with_tensor_table(tmp_path):
    path = save_checkpoint(tmp_path / "b.ckpt", step=1, config={}, tensors=_tensors())
    with zipfile.ZipFile(path) as zf:
        header = zf.read("manifest.json").decode("utf-8")
    assert '"model.weight"' in header
    assert '"float32"' in header
    assert '"shape"' in header


def test_digest_is_order_independent_and_content_sensitive():
    a = _tensors(seed=1)
    d1 = digest_named_tensors(a)
    d2 = digest_named_tensors(dict(reversed(list(a.items()))))
    assert d1 == d2
    b = {k: v.clone() for k, v in a.items()}
    b["model.bias"][0] += 1.0
    assert digest_named_tensors(b) != d1


def test_missing_and_corrupt_archives(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"definitely not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_optimizer_state_round_trip():
    torch.manual_seed(0)
    param_a = torch.nn.Parameter(torch.randn(5, 5))
    opt_a = torch.optim.AdamW([param_a], lr=1e-2, betas=(0.9, 0.5), weight_decay=1e-2)
    for _ in range(3):
        opt_a.zero_grad()
        (param_a**2).sum().backward()
        opt_a.step()

    tensors, meta = optimizer_to_tensors(opt_a)

    param_b = torch.nn.Parameter(param_a.detach().clone())
    opt_b = torch.optim.AdamW([param_b], lr=1e-2, betas=(0.9, 0.5), weight_decay=1e-2)
    optimizer_from_tensors(opt_b, tensors, meta)

    # identical histories must produce identical next updates
    grad = torch.randn(5, 5, generator=torch.Generator().manual_seed(3))
    for param, opt in ((param_a, opt_a), (param_b, opt_b)):
        opt.zero_grad()
        param.grad = grad.clone()
        opt.step()
    assert torch.equal(param_a.detach(), param_b.detach())
