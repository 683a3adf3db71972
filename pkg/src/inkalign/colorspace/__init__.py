"""Exact color mathematics: sRGB <-> CIELAB, grayscale, chroma blending.

Two interchangeable kernel backends exist: a compiled extension
(``_native``, built from Cython) and a pure-numpy fallback. The compiled one
is used when importable; set ``INKALIGN_COLORSPACE_BACKEND=numpy`` or
``=native`` to force a choice. All functions here are pure and safe to call
concurrently.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import ContractViolation
from ..imagetypes import (
    RANGE_UNIT,
    SPACE_CIELAB,
    SPACE_SRGB,
    BlendWeight,
    ImagePlane,
    ImageStack,
    as_blend_weight,
)
from . import _numpy_backend
from .constants import LUMA_WEIGHTS


def _select_backend():
    forced = os.environ.get("INKALIGN_COLORSPACE_BACKEND", "").strip().lower()
    if forced == "numpy":
        return _numpy_backend
    try:
        from . import _native
    except ImportError:
        if forced == "native":
            raise ImportError(
                "INKALIGN_COLORSPACE_BACKEND=native but the compiled extension "
                "is not built; run `pip install -e . --no-build-isolation`"
            )
        return _numpy_backend
    return _native


_backend = _select_backend()


def backend_name() -> str:
    """Which kernel implementation is active: ``native`` or ``numpy``."""
    return _backend.NAME


def rgb_to_lab(img: ImageStack) -> ImageStack:
    """Convert an sRGB stack in [0, 1] to CIELAB (D65 reference white)."""
    img.require_space(SPACE_SRGB)
    if img.range_tag != RANGE_UNIT:
        raise ContractViolation(
            f"rgb_to_lab expects unit-range sRGB, got range tag {img.range_tag!r}"
        )
    return ImageStack(_backend.srgb_to_lab(img.data), space_tag=SPACE_CIELAB)


def lab_to_rgb(img: ImageStack, *, report_clipping: bool = False):
    """Convert CIELAB back to unit-range sRGB.

    Out-of-gamut channel values are clipped to [0, 1]; pass
    ``report_clipping=True`` to also receive the count of clipped values.
    """
    img.require_space(SPACE_CIELAB)
    rgb, clipped = _backend.lab_to_srgb(img.data)
    stack = ImageStack(rgb, space_tag=SPACE_SRGB, range_tag=RANGE_UNIT)
    if report_clipping:
        return stack, clipped
    return stack


def blend_chroma(y_hat: ImageStack, x_col: ImageStack, w: BlendWeight | float) -> ImageStack:
    """Interpolate a*/b* between two CIELAB stacks; L* comes from ``y_hat``.

    ``w.lambda_ab == 0`` reproduces ``y_hat``'s chroma, ``1`` reproduces
    ``x_col``'s; the output L* plane is ``y_hat``'s bit-for-bit.
    """
    y_hat.require_space(SPACE_CIELAB)
    x_col.require_space(SPACE_CIELAB)
    y_hat.require_same_shape(x_col)
    lam = as_blend_weight(w).lambda_ab
    return ImageStack(
        _backend.blend_chroma(y_hat.data, x_col.data, lam), space_tag=SPACE_CIELAB
    )


def to_grayscale(img: ImageStack) -> ImagePlane:
    """Collapse an sRGB stack to BT.601 luma (0.299 R + 0.587 G + 0.114 B)."""
    img.require_space(SPACE_SRGB)
    luma = np.asarray(img.data, dtype=np.float64) @ LUMA_WEIGHTS
    if img.range_tag == RANGE_UNIT:
        luma = np.clip(luma, 0.0, 1.0)
    else:
        luma = np.clip(luma, -1.0, 1.0)
    return ImagePlane(luma, range_tag=img.range_tag)


__all__ = [
    "backend_name",
    "rgb_to_lab",
    "lab_to_rgb",
    "blend_chroma",
    "to_grayscale",
]
