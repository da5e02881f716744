"""Build script: compiles the Cython kernel core when Cython is available.

The extension is optional — if it cannot be built the package installs
anyway and the numpy fallback kernels are used at runtime.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/bevloc/_kernels/_native.pyx"],
        language_level=3,
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
    include_dirs = [numpy.get_include()]
except ImportError:
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
