import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, find_packages, setup

extensions = [
    Extension(
        "uavplan.kernels._fastcore",
        sources=["src/uavplan/kernels/_fastcore.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

# package metadata lives in pyproject.toml; the fields here keep legacy
# setup.py install paths (old pip without PEP 660) working with src layout
setup(
    name="uavplan",
    version="0.1.0",
    package_dir={"": "src"},
    packages=find_packages("src"),
    package_data={"uavplan.configs": ["*.yaml"]},
    ext_modules=cythonize(extensions, language_level="3"),
)
