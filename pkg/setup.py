import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "homwave._ckernels",
    sources=["src/homwave/_ckernels.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(
    ext_modules=cythonize(
        [ext],
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    ),
)
