"""Build script.  The Cython kernel is optional: if Cython or a C compiler is
missing the package still installs and falls back to the numpy kernels."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("MORPHMOTION_NO_NATIVE") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "morphmotion._kernels._native",
                    ["src/morphmotion/_kernels/_native.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
