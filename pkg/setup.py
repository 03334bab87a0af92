"""Builds the optional Cython kernel core.

The package works without it: ``mman.autodiff.kernels`` falls back to the
numpy implementation when the compiled module cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("MMAN_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "mman.autodiff._ckernels",
                    ["src/mman/autodiff/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
