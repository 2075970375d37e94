"""Build script for the compiled path kernel.

The package works without the extension (a numpy fallback is selected at
import time); set BBMLAB_SKIP_EXT=1 to install without compiling.
"""

import os

from setuptools import setup

if os.environ.get("BBMLAB_SKIP_EXT") == "1":
    ext_modules = []
else:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "bbmlab.engine._kernel",
                ["src/bbmlab/engine/_kernel.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
