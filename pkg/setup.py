from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/trafficlab/kernels/_core.pyx"],
        language_level=3,
    )
except ImportError:
    # No Cython at build time: install pure-Python only, the kernel
    # package falls back to the interpreted twin at import.
    ext_modules = []

setup(ext_modules=ext_modules)
