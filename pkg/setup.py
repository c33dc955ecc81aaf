"""Build hook for the optional compiled evaluation kernel.

The package is pure Python apart from ``mbakit._evalcore``, a small Cython
extension that accelerates batched expression evaluation.  The extension is
marked optional: if Cython or a C compiler is unavailable the install still
succeeds and the package falls back to the numpy evaluator at import time.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("MBAKIT_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext = Extension(
            "mbakit._evalcore",
            ["src/mbakit/_evalcore.pyx"],
            optional=True,
        )
        ext_modules = cythonize(ext, language_level=3)
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
