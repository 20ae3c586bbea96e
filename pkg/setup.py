import re

import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

with open("mmdforge/__init__.py", "r") as fh:
    version = re.search(r'^__version__ = "([^"]+)"', fh.read(), re.M).group(1)

setuptools.setup(
    name="mmdforge",
    version=version,
    description="Kernel two-sample tests and MMD GAN training at desk scale",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests", "benchmark"]),
    install_requires=[
        'numpy',
        'scipy',
        'scikit-learn',
        'tqdm',
    ],
    extras_require={
        'test': ['pytest', 'torch'],
    },
    entry_points={
        'console_scripts': ['mmdforge=mmdforge.cli:main'],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    test_suite='tests',
    python_requires='>=3.8',
)
