"""Build hook for the optional compiled receiver kernel.

The package is fully functional without the extension: ctclink.kernels
falls back to a vectorized numpy implementation when the compiled module
is absent (or when CTCLINK_FORCE_PY_KERNEL=1).
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    extensions = cythonize(
        [Extension("ctclink._kernels", ["src/ctclink/_kernels.pyx"])],
        compiler_directives={"language_level": "3"},
    )
else:
    extensions = []

setup(ext_modules=extensions)
