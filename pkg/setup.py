"""Build script for the optional compiled sweep kernel.

The package is fully functional without the extension (a pure Python
kernel with identical arithmetic is selected at import time), so any
failure to build the .pyx module is non-fatal.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "slutskylab._kernels",
                ["src/slutskylab/_kernels.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    print(f"slutskylab: building without compiled kernel ({exc})")

setup(ext_modules=ext_modules)
