"""Build script: compiles the optional fast kernels; falls back to pure python.

The package works without the extension (progsynth._backend selects the numpy
implementation at import time), so a failed compile only costs speed.
"""
import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/progsynth/_speedups.pyx"],
        language_level=3,
        compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True},
    )
    include_dirs = [numpy.get_include()]
    for ext in ext_modules:
        ext.include_dirs = include_dirs
except Exception as exc:  # pragma: no cover - build-env dependent
    print(f"progsynth: skipping compiled kernels ({exc}); using pure-python backend",
          file=sys.stderr)

setup(ext_modules=ext_modules)
