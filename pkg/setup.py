"""Build the optional compiled kernels.

The package imports and runs without them; ``mlrq._backend`` falls back to
the numpy implementation when the extension is missing.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("MLRQ_NO_EXTENSION") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        extensions = [
            Extension(
                "mlrq._kernels",
                ["src/mlrq/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no fast-math / fp contraction: results must match the fallback bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off", "-fopenmp"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ]
        ext_modules = cythonize(
            extensions,
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
