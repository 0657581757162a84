import numpy as np
from setuptools import Extension, setup


def get_extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("WARNING: Cython not available, using the pure-Python kernels.")
        return []
    ext = Extension(
        "pointvsod._kernels",
        sources=["src/pointvsod/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=get_extensions())
