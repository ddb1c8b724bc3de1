from setuptools import Extension, setup
from Cython.Build import cythonize

setup(
    ext_modules=cythonize(
        [Extension("vltaboo._matcher._scan", ["src/vltaboo/_matcher/_scan.pyx"])],
        language_level=3,
    )
)
