"""Builds the optional compiled kernel extension.

The package works without it: ecvlroute.nn.backend falls back to the pure
numpy kernels when the extension is missing or fails to build.
"""
import os

from setuptools import setup, Extension

ext_modules = []
if os.environ.get("ECVLROUTE_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "ecvlroute.nn._kernels",
                    ["src/ecvlroute/nn/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
