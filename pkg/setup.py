"""Build script: compiles the optional Cython engine core.

`pip install .` (or `python setup.py build_ext --inplace`) compiles
``loci_lab._engine._core``.  If Cython or a C toolchain is missing, or
``LOCI_LAB_NO_EXT=1`` is set, the package installs pure-Python and the
engine falls back to the reference kernels at import time.
"""

import os
import sys

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("LOCI_LAB_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "loci_lab._engine._core",
                    ["src/loci_lab/_engine/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except Exception as exc:  # pragma: no cover - toolchain-dependent
        sys.stderr.write(f"loci-lab: building without compiled core ({exc})\n")

setup(ext_modules=ext_modules)
