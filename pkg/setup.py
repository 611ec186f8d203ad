"""Build script: compiles the optional Cython metric kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed. Set OBFNET_SKIP_EXT=1
to skip the extension build entirely.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("OBFNET_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "obfnet._kernels._metrics_cy",
                    ["src/obfnet/_kernels/_metrics_cy.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
