"""Build the optional compiled kernels.

The package works without them: multistudy._kernels falls back to the pure
NumPy implementation when the extension is missing or fails to import.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "multistudy._kernels._speedups",
                ["src/multistudy/_kernels/_speedups.pyx"],
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
    extensions = []

setup(ext_modules=extensions)
