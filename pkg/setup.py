"""Build script for the optional compiled local-SGD kernels.

If Cython or a C compiler is unavailable the package still installs; the
pure-numpy fallback in ``fedsim._kernels`` is selected at import time.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "fedsim._kernels._local_sgd",
                ["src/fedsim/_kernels/_local_sgd.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
