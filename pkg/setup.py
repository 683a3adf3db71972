"""Builds the optional native colorspace kernels.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes the per-pixel sRGB<->CIELAB conversion
and chroma blending faster. Skip the build entirely with
INKALIGN_SKIP_NATIVE=1.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("INKALIGN_SKIP_NATIVE", "0") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "inkalign.colorspace._native",
                    ["src/inkalign/colorspace/_native.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
