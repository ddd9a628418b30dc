"""Builds the optional Cython kernel extension.

The package works without the extension (numpy/scipy fallback selected at
import), so a failed native build degrades to a warning instead of aborting
the install.
"""

import warnings

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, cythonize failure, ...
            warnings.warn(f"building atriaseg._kernels._cykernels failed ({exc}); "
                          "falling back to the pure numpy/scipy kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"building {ext.name} failed ({exc}); "
                          "falling back to the pure numpy/scipy kernels")


try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "atriaseg._kernels._cykernels",
                sources=["src/atriaseg/_kernels/_cykernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
