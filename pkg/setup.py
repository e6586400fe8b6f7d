"""Build script for the optional compiled kernels (quantizer, GELU).

The extension is optional: if Cython or a C compiler is missing the package
still installs and falls back to the numpy implementations at import time.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("MUSLAB_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    name,
                    [path],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
                for name, path in (
                    ("muslab.fp8._kernels", "src/muslab/fp8/_kernels.pyx"),
                    ("muslab.autograd._kernels", "src/muslab/autograd/_kernels.pyx"),
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
