"""Builds the optional compiled kernels; the package works without them."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("HIADV_NO_EXT", "") in ("", "0"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("hiadv._kernels._ext", ["src/hiadv/_kernels/_ext.pyx"],
                       extra_compile_args=["-O2", "-ffp-contract=off"])],
            language_level=3,
        )

setup(ext_modules=ext_modules)
