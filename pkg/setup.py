"""Build script for the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed extension build should not block installation.
"""

import numpy
from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "munlab._kernels._core",
                sources=["src/munlab/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
