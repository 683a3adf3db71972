"""Dataset ingestion, augmentation, and training-pair synthesis.

A dataset is a folder of color raster images. ``ingest`` builds a manifest
(JSON beside the data root) with per-file checksums and train/eval split
tags; ``synthesize_pair`` turns one image into the (ground truth, shaded
grayscale, rough color) triple the trainer consumes. Iteration order is a
pure function of (manifest, seed), so multi-worker synthesis cannot change
what the model sees.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import colorspace
from .errors import ContractViolation, DatasetError
from .hints import HintSet, load_hints, save_hints  # noqa: F401  (document API lives here too)
from .imagetypes import ImagePlane, ImageStack
from .priors import DegradationConfig, synthetic_rough_color
from .seeding import derive_seed

log = logging.getLogger(__name__)

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".webp", ".bmp"}


@dataclass
class SamplePair:
    """One training example: all rasters share dimensions."""

    y_true: ImageStack
    x_g: ImagePlane
    x_col: ImageStack
    source_id: str
    seed: int

    def __post_init__(self) -> None:
        dims = (self.y_true.height, self.y_true.width)
        for name, raster in (("x_g", self.x_g), ("x_col", self.x_col)):
            if (raster.height, raster.width) != dims:
                raise ContractViolation(f"{name} dims differ from y_true {dims}")

    def check_divisible(self, factor: int) -> "SamplePair":
        if self.y_true.height % factor or self.y_true.width % factor:
            raise ContractViolation(
                f"sample {self.source_id} dims {self.y_true.height}x"
                f"{self.y_true.width} not divisible by {factor}"
            )
        return self


@dataclass
class ManifestEntry:
    id: str  # path relative to the root
    width: int
    height: int
    sha256: str


@dataclass
class DatasetManifest:
    root: str
    entries: list[ManifestEntry] = field(default_factory=list)
    train_ids: list[str] = field(default_factory=list)
    eval_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        overlap = set(self.train_ids) & set(self.eval_ids)
        if overlap:
            raise DatasetError(f"entries in both splits: {sorted(overlap)[:5]}")

    def entry(self, entry_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise DatasetError(f"unknown manifest entry {entry_id!r}")

    def path_of(self, entry_id: str) -> Path:
        return Path(self.root) / entry_id


def load_image(path: Path) -> ImageStack:
    from PIL import Image

    img = Image.open(path)
    img.load()
    if img.mode != "RGB":
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return ImageStack(arr)


def save_image(stack: ImageStack, path: Path) -> None:
    from PIL import Image

    stack.require_space("sRGB")
    arr = np.clip(stack.data * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def save_plane(plane: ImagePlane, path: Path) -> None:
    from PIL import Image

    arr = np.clip(plane.data * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def ingest(root: str | Path, *, eval_fraction: float = 0.0, seed: int = 0) -> DatasetManifest:
    """Scan a folder of raster images into a manifest.

    Corrupt files are logged and skipped; an empty result is an error.
    Entries are sorted by relative path so re-ingesting an unchanged folder
    yields an identical manifest.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    candidates = sorted(
        p for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES
    )
    entries: list[ManifestEntry] = []
    for path in candidates:
        try:
            stack = load_image(path)
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        entries.append(
            ManifestEntry(
                id=str(path.relative_to(root)),
                width=stack.width,
                height=stack.height,
                sha256=_sha256_file(path),
            )
        )
    if not entries:
        raise DatasetError(f"no decodable images under {root}")

    ids = [e.id for e in entries]
    n_eval = int(round(eval_fraction * len(ids)))
    if n_eval:
        order = np.random.default_rng(seed).permutation(len(ids))
        eval_ids = sorted(ids[i] for i in order[:n_eval])
    else:
        eval_ids = []
    train_ids = [i for i in ids if i not in set(eval_ids)]
    return DatasetManifest(root=str(root), entries=entries,
                           train_ids=train_ids, eval_ids=eval_ids)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "root": manifest.root,
        "entries": [vars(e) for e in manifest.entries],
        "splits": {"train": manifest.train_ids, "eval": manifest.eval_ids},
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_manifest(path: str | Path, *, verify: bool = True) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text())
        manifest = DatasetManifest(
            root=doc["root"],
            entries=[ManifestEntry(**e) for e in doc["entries"]],
            train_ids=list(doc["splits"]["train"]),
            eval_ids=list(doc["splits"]["eval"]),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"malformed manifest {path}: {exc}") from exc
    if verify:
        for e in manifest.entries:
            actual = _sha256_file(manifest.path_of(e.id))
            if actual != e.sha256:
                raise DatasetError(
                    f"checksum mismatch for {e.id}: manifest {e.sha256[:12]}..., "
                    f"file {actual[:12]}..."
                )
    return manifest


def prepare(
    img: ImageStack,
    crop_seed: int,
    *,
    resize_to: int = 512,
    crop_size: int = 256,
) -> ImageStack:
    """Resize so the shortest side is ``resize_to`` (bicubic, aspect kept),
    then take a seeded random ``crop_size`` square crop. Images smaller than
    ``resize_to`` are upscaled rather than rejected."""
    img.require_space("sRGB")
    h, w = img.height, img.width
    scale = resize_to / min(h, w)
    new_h, new_w = max(crop_size, round(h * scale)), max(crop_size, round(w * scale))
    t = torch.from_numpy(np.ascontiguousarray(img.data.transpose(2, 0, 1)))[None]
    resized = torch.nn.functional.interpolate(
        t, size=(new_h, new_w), mode="bicubic", antialias=True
    )[0].numpy().transpose(1, 2, 0)
    resized = np.clip(resized, 0.0, 1.0)

    rng = np.random.default_rng(crop_seed)
    top = int(rng.integers(0, new_h - crop_size + 1))
    left = int(rng.integers(0, new_w - crop_size + 1))
    crop = resized[top : top + crop_size, left : left + crop_size]
    return ImageStack(np.ascontiguousarray(crop))


def synthesize_pair(
    img: ImageStack,
    deg_cfg: DegradationConfig,
    crop_seed: int,
    *,
    source_id: str = "",
    resize_to: int = 512,
    crop_size: int = 256,
) -> SamplePair:
    """Ground truth crop plus its grayscale transform and degraded color."""
    y_true = prepare(img, crop_seed, resize_to=resize_to, crop_size=crop_size)
    x_g = colorspace.to_grayscale(y_true)
    x_col = synthetic_rough_color(y_true, deg_cfg)
    return SamplePair(y_true=y_true, x_g=x_g, x_col=x_col,
                      source_id=source_id, seed=crop_seed)


def epoch_order(n: int, epoch: int, seed: int) -> np.ndarray:
    """Deterministic permutation of sample indices for one epoch."""
    return np.random.default_rng(derive_seed(seed, "epoch", epoch)).permutation(n)


def batch_entry_ids(manifest: DatasetManifest, batch_size: int, step: int, seed: int) -> list[str]:
    """Entry ids for one training step, a pure function of its arguments.

    Steps consume the concatenated stream of per-epoch permutations of the
    train split, ``batch_size`` at a time.
    """
    ids = manifest.train_ids
    n = len(ids)
    if n == 0:
        raise DatasetError("manifest has an empty train split")
    picked = []
    for slot in range(batch_size):
        flat = step * batch_size + slot
        epoch, offset = divmod(flat, n)
        picked.append(ids[int(epoch_order(n, epoch, seed)[offset])])
    return picked
