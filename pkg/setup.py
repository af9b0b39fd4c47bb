"""Build script for the optional compiled sparse kernels.

The package is pure Python except for one small Cython extension holding the
CSC matrix-vector kernels.  The extension is marked optional: if no C compiler
is available the install still succeeds and the package falls back to the
NumPy reference kernels at import time.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "conegrad._kernels._csc",
                ["src/conegrad/_kernels/_csc.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level="3",
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
