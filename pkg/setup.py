"""Build script for the compiled scan kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed build is not fatal for pure-Python installs.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "histoscan.kernels._scan_cy",
        sources=["src/histoscan/kernels/_scan_cy.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )
)
