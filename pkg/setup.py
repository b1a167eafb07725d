import os

from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to the pure
# numpy implementations in lfdnet.kernels.reference when the extension is
# absent.  Set LFDNET_SKIP_EXT=1 to build without it.
ext_modules = []
if not os.environ.get("LFDNET_SKIP_EXT"):
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        Extension(
            "lfdnet.kernels._fastcore",
            sources=["src/lfdnet/kernels/_fastcore.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            # -ffp-contract=off keeps results bitwise identical to the
            # numpy fallback (no fused multiply-add in the edge functions).
            extra_compile_args=["-O3", "-ffp-contract=off"],
        ),
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
