import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SMP_LAB_NO_EXT", "") in ("", "0"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "smp_lab.kernels._ckernels",
                    ["src/smp_lab/kernels/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    # keep IEEE evaluation order identical to the NumPy fallback
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
