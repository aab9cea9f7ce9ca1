"""Builds the optional compiled kernels.

The package works without them (a pure-Python fallback is selected at
import time), so any failure here degrades to a source-only install
instead of aborting.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension(
            "bytepatch._kernels",
            sources=["src/bytepatch/_kernels.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )],
        language_level="3",
    )
except Exception as exc:  # Cython, numpy headers, or a C++ toolchain missing
    print(f"bytepatch: skipping compiled kernels ({exc!r}); "
          "pure-Python fallback will be used")

setup(ext_modules=ext_modules)
