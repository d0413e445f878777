import os
import sys

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the compiled kernels if possible; the package falls back to numpy otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            sys.stderr.write(f"warning: compiled kernels not built ({exc})\n")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            sys.stderr.write(f"warning: failed to build {ext.name} ({exc})\n")


extensions = []
if os.environ.get("CONDPCA_NO_EXTENSION", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover
        cythonize = None
    if cythonize is not None:
        extensions = cythonize(
            [
                Extension(
                    "condpca._kernels",
                    ["src/condpca/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})
