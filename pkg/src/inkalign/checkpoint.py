"""Checkpoint archive: a named-tensor container with a plain-text header.

Layout (ZIP):

    manifest.json          -- step, config + hash, frozen-parameter digests,
                              tensor table (name, shape, dtype), extras
    tensors/<name>.bin     -- raw little-endian array bytes

No pickles anywhere, so archives are portable and the round trip is
bit-exact. Optimizer state is flattened into the same named-tensor space.
"""

from __future__ import annotations

import hashlib
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

FORMAT_NAME = "inkalign-checkpoint"
FORMAT_VERSION = 1


@dataclass
class CheckpointManifest:
    step: int
    config_hash: str
    config: dict
    frozen_digests: dict[str, str] = field(default_factory=dict)
    tensors: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _tensor_bytes(t: torch.Tensor) -> tuple[bytes, str, tuple[int, ...]]:
    arr = t.detach().cpu().contiguous().numpy()
    return arr.tobytes(), str(arr.dtype), tuple(arr.shape)


def digest_named_tensors(named: dict[str, torch.Tensor]) -> str:
    """Order-independent digest over names, dtypes, shapes, and raw bytes."""
    h = hashlib.sha256()
    for name in sorted(named):
        data, dtype, shape = _tensor_bytes(named[name])
        h.update(name.encode("utf-8"))
        h.update(dtype.encode("utf-8"))
        h.update(repr(shape).encode("utf-8"))
        h.update(data)
    return h.hexdigest()


def digest_module(module: torch.nn.Module) -> str:
    return digest_named_tensors(dict(module.state_dict()))


def save_checkpoint(
    path: str | Path,
    *,
    step: int,
    config: dict,
    tensors: dict[str, torch.Tensor],
    frozen_digests: dict[str, str] | None = None,
    extras: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = []
    blobs: dict[str, bytes] = {}
    for name, tensor in tensors.items():
        data, dtype, shape = _tensor_bytes(tensor)
        table.append({"name": name, "shape": list(shape), "dtype": dtype})
        blobs[name] = data
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "step": step,
        "config": config,
        "config_hash": config_hash(config),
        "frozen_digests": frozen_digests or {},
        "tensors": table,
        "extras": extras or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2))
        for name, data in blobs.items():
            zf.writestr(f"tensors/{name}.bin", data)
    return path


def load_checkpoint(path: str | Path) -> tuple[CheckpointManifest, dict[str, torch.Tensor]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            raw = json.loads(zf.read("manifest.json"))
            if raw.get("format") != FORMAT_NAME:
                raise CheckpointError(f"{path} is not an {FORMAT_NAME} archive")
            tensors: dict[str, torch.Tensor] = {}
            for row in raw["tensors"]:
                blob = zf.read(f"tensors/{row['name']}.bin")
                arr = np.frombuffer(blob, dtype=np.dtype(row["dtype"]))
                arr = arr.reshape(row["shape"]).copy()
                tensors[row["name"]] = torch.from_numpy(arr)
    except (KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    manifest = CheckpointManifest(
        step=raw["step"],
        config_hash=raw["config_hash"],
        config=raw["config"],
        frozen_digests=raw.get("frozen_digests", {}),
        tensors=raw["tensors"],
        extras=raw.get("extras", {}),
    )
    return manifest, tensors


# --- optimizer state <-> named tensors ----------------------------------------


def optimizer_to_tensors(opt: torch.optim.Optimizer) -> tuple[dict[str, torch.Tensor], dict]:
    """Flatten optimizer state into named tensors plus a JSON-safe meta blob."""
    sd = opt.state_dict()
    tensors: dict[str, torch.Tensor] = {}
    scalars: dict[str, object] = {}
    for idx, state in sd["state"].items():
        for key, val in state.items():
            if isinstance(val, torch.Tensor):
                tensors[f"state.{idx}.{key}"] = val
            else:
                scalars[f"{idx}.{key}"] = val
    meta = {"param_groups": sd["param_groups"], "state_scalars": scalars}
    return tensors, meta


def optimizer_from_tensors(
    opt: torch.optim.Optimizer, tensors: dict[str, torch.Tensor], meta: dict
) -> None:
    state: dict[int, dict] = {}
    for name, tensor in tensors.items():
        _, idx, key = name.split(".", 2)
        state.setdefault(int(idx), {})[key] = tensor.clone()
    for name, value in meta.get("state_scalars", {}).items():
        idx, key = name.split(".", 1)
        state.setdefault(int(idx), {})[key] = value
    opt.load_state_dict({"param_groups": meta["param_groups"], "state": state})
