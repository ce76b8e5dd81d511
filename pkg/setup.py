from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; numeric.py falls back to numpy loops
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "majority_kernels._kernels",
                ["src/majority_kernels/_kernels.pyx"],
                # no fused multiply-add: results must match the numpy fallback bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
