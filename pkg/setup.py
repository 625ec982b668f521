import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "coalflow._ckernels",
        ["src/coalflow/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        # no fast-math/FMA: the compiled kernels must match the pure-Python ones bit for bit
        extra_compile_args=["-O2", "-ffp-contract=off"],
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
