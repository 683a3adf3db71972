# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused per-pixel colorspace kernels.

Mirrors ``_numpy_backend`` exactly (same constants, same branch structure)
but performs linearize -> matrix -> piecewise cube root in one pass per
pixel, avoiding the five full-image temporaries the vectorized version
allocates.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cbrt, pow

cnp.import_array()

from . import constants as _c

cdef double M00 = _c.SRGB_TO_XYZ[0, 0]
cdef double M01 = _c.SRGB_TO_XYZ[0, 1]
cdef double M02 = _c.SRGB_TO_XYZ[0, 2]
cdef double M10 = _c.SRGB_TO_XYZ[1, 0]
cdef double M11 = _c.SRGB_TO_XYZ[1, 1]
cdef double M12 = _c.SRGB_TO_XYZ[1, 2]
cdef double M20 = _c.SRGB_TO_XYZ[2, 0]
cdef double M21 = _c.SRGB_TO_XYZ[2, 1]
cdef double M22 = _c.SRGB_TO_XYZ[2, 2]

cdef double N00 = _c.XYZ_TO_SRGB[0, 0]
cdef double N01 = _c.XYZ_TO_SRGB[0, 1]
cdef double N02 = _c.XYZ_TO_SRGB[0, 2]
cdef double N10 = _c.XYZ_TO_SRGB[1, 0]
cdef double N11 = _c.XYZ_TO_SRGB[1, 1]
cdef double N12 = _c.XYZ_TO_SRGB[1, 2]
cdef double N20 = _c.XYZ_TO_SRGB[2, 0]
cdef double N21 = _c.XYZ_TO_SRGB[2, 1]
cdef double N22 = _c.XYZ_TO_SRGB[2, 2]

cdef double WX = _c.WHITE_POINT[0]
cdef double WY = _c.WHITE_POINT[1]
cdef double WZ = _c.WHITE_POINT[2]

cdef double LAB_EPS = _c.LAB_EPS
cdef double LAB_DELTA = _c.LAB_DELTA
cdef double LAB_SLOPE = _c.LAB_SLOPE
cdef double LAB_OFFSET = _c.LAB_OFFSET
cdef double LIN_T = _c.SRGB_LIN_THRESHOLD
cdef double INV_T = _c.SRGB_INV_THRESHOLD

NAME = "native"


cdef inline double _linearize(double c) nogil:
    if c <= LIN_T:
        return c / 12.92
    return pow((c + 0.055) / 1.055, 2.4)


cdef inline double _delinearize(double c) nogil:
    if c <= INV_T:
        return c * 12.92
    return 1.055 * pow(c, 1.0 / 2.4) - 0.055


cdef inline double _lab_f(double t) nogil:
    if t > LAB_EPS:
        return cbrt(t)
    return t * LAB_SLOPE + LAB_OFFSET


cdef inline double _lab_f_inv(double u) nogil:
    if u > LAB_DELTA:
        return u * u * u
    return (u - LAB_OFFSET) / LAB_SLOPE


def srgb_to_lab(rgb):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] src = np.ascontiguousarray(rgb, dtype=np.float64)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((h, w, 3), dtype=np.float64)
    cdef double[:, :, ::1] s = src
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double r, g, b, x, y, z, fx, fy, fz
    with nogil:
        for i in range(h):
            for j in range(w):
                r = _linearize(s[i, j, 0])
                g = _linearize(s[i, j, 1])
                b = _linearize(s[i, j, 2])
                x = M00 * r + M01 * g + M02 * b
                y = M10 * r + M11 * g + M12 * b
                z = M20 * r + M21 * g + M22 * b
                fx = _lab_f(x / WX)
                fy = _lab_f(y / WY)
                fz = _lab_f(z / WZ)
                o[i, j, 0] = 116.0 * fy - 16.0
                o[i, j, 1] = 500.0 * (fx - fy)
                o[i, j, 2] = 200.0 * (fy - fz)
    return out


def lab_to_srgb(lab):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] src = np.ascontiguousarray(lab, dtype=np.float64)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((h, w, 3), dtype=np.float64)
    cdef double[:, :, ::1] s = src
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, j, k
    cdef long clipped = 0
    cdef double fx, fy, fz, x, y, z, v
    cdef double rgb[3]
    with nogil:
        for i in range(h):
            for j in range(w):
                fy = (s[i, j, 0] + 16.0) / 116.0
                fx = fy + s[i, j, 1] / 500.0
                fz = fy - s[i, j, 2] / 200.0
                x = _lab_f_inv(fx) * WX
                y = _lab_f_inv(fy) * WY
                z = _lab_f_inv(fz) * WZ
                rgb[0] = N00 * x + N01 * y + N02 * z
                rgb[1] = N10 * x + N11 * y + N12 * z
                rgb[2] = N20 * x + N21 * y + N22 * z
                for k in range(3):
                    v = rgb[k]
                    if v <= INV_T:
                        v = v * 12.92
                    else:
                        v = 1.055 * pow(v, 1.0 / 2.4) - 0.055
                    if v < -1e-12 or v > 1.0 + 1e-12:
                        clipped += 1
                    if v < 0.0:
                        v = 0.0
                    elif v > 1.0:
                        v = 1.0
                    o[i, j, k] = v
    return out, int(clipped)


def blend_chroma(y_hat_lab, x_col_lab, double lam):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] a = np.ascontiguousarray(y_hat_lab, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] b = np.ascontiguousarray(x_col_lab, dtype=np.float64)
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((h, w, 3), dtype=np.float64)
    cdef double[:, :, ::1] va = a
    cdef double[:, :, ::1] vb = b
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double keep = 1.0 - lam
    with nogil:
        for i in range(h):
            for j in range(w):
                o[i, j, 0] = va[i, j, 0]
                o[i, j, 1] = va[i, j, 1] * keep + vb[i, j, 1] * lam
                o[i, j, 2] = va[i, j, 2] * keep + vb[i, j, 2] * lam
    return out
