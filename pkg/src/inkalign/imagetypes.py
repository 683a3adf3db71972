"""Raster value types with declared color space and value range.

Every image passed between stages is either an :class:`ImagePlane`
(single-channel) or an :class:`ImageStack` (three-channel), tagged with the
space and range its values live in. Constructors validate eagerly so range
bugs surface at the module boundary where they happen, not three stages
later as garbage pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, ShapeMismatch

# range tags for sRGB / grayscale data
RANGE_UNIT = "unit"      # [0, 1]
RANGE_SIGNED = "signed"  # [-1, 1]

# space tags
SPACE_SRGB = "sRGB"
SPACE_CIELAB = "CIELAB"

# CIELAB native bounds: L* in [0, 100], a*/b* in [-128, 127]
_LAB_LO = np.array([0.0, -128.0, -128.0])
_LAB_HI = np.array([100.0, 127.0, 127.0])

_RANGE_BOUNDS = {RANGE_UNIT: (0.0, 1.0), RANGE_SIGNED: (-1.0, 1.0)}


def _check_range(data: np.ndarray, lo: float, hi: float, what: str) -> None:
    if data.size == 0:
        raise ContractViolation(f"{what}: empty raster")
    vmin = float(data.min())
    vmax = float(data.max())
    if not np.isfinite(vmin) or not np.isfinite(vmax):
        raise ContractViolation(f"{what}: non-finite values present")
    if vmin < lo or vmax > hi:
        raise ContractViolation(
            f"{what}: values [{vmin:.6g}, {vmax:.6g}] outside declared range [{lo:g}, {hi:g}]"
        )


@dataclass
class ImagePlane:
    """Single-channel floating-point raster (H, W) with a declared range."""

    data: np.ndarray
    range_tag: str = RANGE_UNIT

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ContractViolation(f"ImagePlane expects a 2-D grid, got shape {self.data.shape}")
        if not np.issubdtype(self.data.dtype, np.floating):
            raise ContractViolation(f"ImagePlane expects floating-point data, got {self.data.dtype}")
        if self.range_tag not in _RANGE_BOUNDS:
            raise ContractViolation(f"unknown range tag {self.range_tag!r}")
        lo, hi = _RANGE_BOUNDS[self.range_tag]
        _check_range(self.data, lo, hi, "ImagePlane")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class ImageStack:
    """Three-channel floating-point raster (H, W, 3) tagged with its color space.

    sRGB stacks carry a range tag (``unit`` or ``signed``); CIELAB stacks use
    the space's native units (L* in [0, 100], a*/b* in [-128, 127]) and the
    range tag is fixed to ``native``.
    """

    data: np.ndarray
    space_tag: str = SPACE_SRGB
    range_tag: str = RANGE_UNIT

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ContractViolation(
                f"ImageStack expects shape (H, W, 3), got {self.data.shape}"
            )
        if not np.issubdtype(self.data.dtype, np.floating):
            raise ContractViolation(f"ImageStack expects floating-point data, got {self.data.dtype}")
        if self.space_tag == SPACE_SRGB:
            if self.range_tag not in _RANGE_BOUNDS:
                raise ContractViolation(f"unknown range tag {self.range_tag!r}")
            lo, hi = _RANGE_BOUNDS[self.range_tag]
            _check_range(self.data, lo, hi, "ImageStack[sRGB]")
        elif self.space_tag == SPACE_CIELAB:
            self.range_tag = "native"
            if self.data.size == 0:
                raise ContractViolation("ImageStack[CIELAB]: empty raster")
            if not np.isfinite(self.data).all():
                raise ContractViolation("ImageStack[CIELAB]: non-finite values present")
            mins = self.data.reshape(-1, 3).min(axis=0)
            maxs = self.data.reshape(-1, 3).max(axis=0)
            if (mins < _LAB_LO - 1e-9).any() or (maxs > _LAB_HI + 1e-9).any():
                raise ContractViolation(
                    f"ImageStack[CIELAB]: channel extrema {mins}..{maxs} outside native bounds"
                )
        else:
            raise ContractViolation(f"unknown space tag {self.space_tag!r}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def require_space(self, space_tag: str) -> "ImageStack":
        if self.space_tag != space_tag:
            raise ContractViolation(
                f"expected an ImageStack tagged {space_tag}, got {self.space_tag}"
            )
        return self

    def require_same_shape(self, other: "ImageStack") -> None:
        if self.data.shape != other.data.shape:
            raise ShapeMismatch(
                f"shape mismatch: {self.data.shape} vs {other.data.shape}"
            )


@dataclass(frozen=True)
class BlendWeight:
    """Interpolation weight between generator chroma and rough-color chroma."""

    lambda_ab: float = field(default=0.0)

    def __post_init__(self) -> None:
        if not (0.0 <= self.lambda_ab <= 1.0):
            raise ContractViolation(f"lambda_ab must lie in [0, 1], got {self.lambda_ab}")


def as_blend_weight(w: "BlendWeight | float") -> BlendWeight:
    return w if isinstance(w, BlendWeight) else BlendWeight(float(w))
