import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "nqkv._ckernels",
        ["src/nqkv/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # keep a*b+c as two roundings so results match the NumPy fallback
        extra_compile_args=["-O3", "-ffp-contract=off"],
        # a failed compile leaves the NumPy kernels in charge
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
