"""Build script for the optional compiled kernel core.

The package works without the extension (numpy fallback is selected at
import time); set IRWATCH_SKIP_EXT=1 to skip compilation entirely.
"""
import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("IRWATCH_SKIP_EXT") == "1":
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "irwatch._fastkernels",
        ["src/irwatch/_fastkernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
