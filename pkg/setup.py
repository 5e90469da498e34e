import numpy as np
from setuptools import Extension, setup

# The compiled transport kernel is optional. Without Cython the package
# installs anyway and falls back to the numpy implementation at import.
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "folirec._transport",
                ["src/folirec/_transport.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
