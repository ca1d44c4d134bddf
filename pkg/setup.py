import numpy as np
from setuptools import Extension, setup

# The compiled segment-op kernels are optional: without Cython (or a C
# compiler) the package falls back to the numpy implementation at import.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "fead._kernels._ckernels",
                ["src/fead/_kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
