"""Shared constants for the sRGB <-> CIELAB conversion kernels.

The D65 reference white is defined as the image of sRGB white (1, 1, 1)
through the forward matrix, so the white-point identity holds to machine
precision instead of drifting by the rounding of independently published
constants.
"""

import numpy as np

# sRGB (linear) -> XYZ under D65, 2-degree observer
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=np.float64,
)

XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)

# white point consistent with the matrix (rows evaluated at RGB = (1,1,1))
WHITE_POINT = SRGB_TO_XYZ.sum(axis=1)

# CIELAB piecewise-cube-root breakpoints
LAB_DELTA = 6.0 / 29.0
LAB_EPS = LAB_DELTA**3          # threshold on t in f(t)
LAB_SLOPE = 1.0 / (3.0 * LAB_DELTA**2)  # linear-segment slope
LAB_OFFSET = 4.0 / 29.0

# sRGB companding breakpoints
SRGB_LIN_THRESHOLD = 0.04045    # on gamma-encoded values
SRGB_INV_THRESHOLD = 0.0031308  # on linear values

# BT.601 luma weights used by the grayscale transform
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)
