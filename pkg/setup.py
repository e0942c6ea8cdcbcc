"""Build script: compiles the optional Cython kernels when possible."""
from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension(
            "cachenet._ckernels",
            ["src/cachenet/_ckernels.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    print("Cython or numpy not available: installing the pure-Python kernels only")

setup(ext_modules=ext_modules)
