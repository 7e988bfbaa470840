"""Optional compiled kernels; the package falls back to NumPy when the build is skipped."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("OTMESH_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("otmesh._kernels._ckernels", ["src/otmesh/_kernels/_ckernels.pyx"],
                       include_dirs=[np.get_include()], extra_compile_args=["-O3"],
                       define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
