"""Pure-numpy colorspace kernels.

This is the fallback (and reference) implementation of the hot per-pixel
loops; the compiled extension in ``_native.pyx`` fuses the same math into a
single pass. Both operate on raw float64 arrays; tag validation lives in the
package front door.
"""

from __future__ import annotations

import numpy as np

from .constants import (
    LAB_DELTA,
    LAB_EPS,
    LAB_OFFSET,
    LAB_SLOPE,
    SRGB_INV_THRESHOLD,
    SRGB_LIN_THRESHOLD,
    SRGB_TO_XYZ,
    WHITE_POINT,
    XYZ_TO_SRGB,
)

NAME = "numpy"


def _linearize(srgb: np.ndarray) -> np.ndarray:
    return np.where(
        srgb <= SRGB_LIN_THRESHOLD,
        srgb / 12.92,
        ((srgb + 0.055) / 1.055) ** 2.4,
    )


def _delinearize(linear: np.ndarray) -> np.ndarray:
    # negative linear values can appear for out-of-gamut Lab input; the power
    # is only evaluated on the positive branch
    safe = np.maximum(linear, 0.0)
    return np.where(
        linear <= SRGB_INV_THRESHOLD,
        linear * 12.92,
        1.055 * safe ** (1.0 / 2.4) - 0.055,
    )


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > LAB_EPS, np.cbrt(t), t * LAB_SLOPE + LAB_OFFSET)


def _lab_f_inv(u: np.ndarray) -> np.ndarray:
    return np.where(u > LAB_DELTA, u**3, (u - LAB_OFFSET) / LAB_SLOPE)


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) sRGB in [0, 1] -> (H, W, 3) CIELAB, float64."""
    linear = _linearize(np.asarray(rgb, dtype=np.float64))
    xyz = linear @ SRGB_TO_XYZ.T
    f = _lab_f(xyz / WHITE_POINT)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def lab_to_srgb(lab: np.ndarray) -> tuple[np.ndarray, int]:
    """(H, W, 3) CIELAB -> (H, W, 3) sRGB clipped to [0, 1], plus clip count.

    The count is the number of scalar channel values that fell outside
    [0, 1] before clipping (out-of-gamut evidence).
    """
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = _lab_f_inv(np.stack([fx, fy, fz], axis=-1)) * WHITE_POINT
    linear = xyz @ XYZ_TO_SRGB.T
    srgb = _delinearize(linear)
    clipped = int(np.count_nonzero((srgb < -1e-12) | (srgb > 1.0 + 1e-12)))
    return np.clip(srgb, 0.0, 1.0), clipped


def blend_chroma(y_hat_lab: np.ndarray, x_col_lab: np.ndarray, lam: float) -> np.ndarray:
    """Interpolate a*/b* channels; L* is taken from ``y_hat_lab`` unchanged."""
    y_hat_lab = np.asarray(y_hat_lab, dtype=np.float64)
    x_col_lab = np.asarray(x_col_lab, dtype=np.float64)
    out = np.empty_like(y_hat_lab)
    out[..., 0] = y_hat_lab[..., 0]
    out[..., 1:] = y_hat_lab[..., 1:] * (1.0 - lam) + x_col_lab[..., 1:] * lam
    return out
