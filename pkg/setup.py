"""Build hook: compiles the simplex pivot kernel when Cython is available.

The package works without the compiled extension (a numpy fallback is
selected at import time), so any build failure here is deliberately
non-fatal for `pip install`.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "drfmt.lp._kernel",
                ["src/drfmt/lp/_kernel.pyx"],
                # -ffp-contract=off keeps multiply-then-subtract as two
                # rounded operations, matching the numpy fallback exactly
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
