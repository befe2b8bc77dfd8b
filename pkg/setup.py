"""Build script for the optional compiled kernel extension.

The package works without the extension (pure-numpy fallbacks are selected
at import time), so a missing compiler or Cython only costs performance.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("SPLATSIM_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "splatsim._kernels.native",
                    ["src/splatsim/_kernels/native.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
