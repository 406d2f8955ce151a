import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "stepreg._kernels.grid",
                ["src/stepreg/_kernels/grid.pyx"],
                include_dirs=[np.get_include()],
                # fp-contract off: squared distances must match the numpy
                # fallback bitwise, FMA fusion would break that
                extra_compile_args=["-O3", "-ffp-contract=off"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
except ImportError:
    # no Cython: the pure-numpy fallback backend is used at runtime
    extensions = []

setup(ext_modules=extensions)
