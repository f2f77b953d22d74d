"""Build the optional Cython kernel extension.

If Cython or a C compiler is unavailable the package still installs and
falls back to the numpy kernels at import time.
"""
import os

from setuptools import setup

ext_modules = []
compile_args = ["-O3", "-ffast-math"]
if os.environ.get("DFAST_NATIVE", "1") == "1":
    compile_args.append("-march=native")

if os.environ.get("DFAST_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "dfast._ckernels",
                    ["src/dfast/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=compile_args,
                    extra_link_args=["-lmvec", "-lm"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
