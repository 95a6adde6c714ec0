"""Build script for the optional compiled kernels.

The package is fully functional without the extension: clusterdl.kernels
falls back to a pure NumPy implementation when the compiled module is
missing. Building with Cython just makes the per-round training loop faster.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build-time guard
    cythonize = None

if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "clusterdl.kernels._mlp_c",
                ["src/clusterdl/kernels/_mlp_c.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
else:  # pragma: no cover
    extensions = []

setup(ext_modules=extensions)
