from setuptools import setup

VERSION = "0.1.0"

NAME = "paircam"
LICENSE = "apache-2.0"
DESCRIPTION = (
    "Photon-pair joint distributions from single-photon and EMCCD camera frames"
)
KEYWORDS = [
    "photon pairs",
    "SPDC",
    "EMCCD",
    "single-photon counting",
    "correlation imaging",
    "joint probability distribution",
    "Monte Carlo",
]
CLASSIFIERS = [
    "Intended Audience :: Science/Research",
    "License :: OSI Approved :: Apache Software License",
    "Operating System :: POSIX :: Linux",
    "Programming Language :: Python :: 3 :: Only",
    "Topic :: Scientific/Engineering :: Physics",
    "Development Status :: 3 - Alpha",
]
INSTALL_REQUIRES = [
    "numpy>=1.20,<2",
    "scipy>=1.7,<2",
    "pandas>=1,<3",
    "tomlkit>=0.11,<1",
    "click>=7,<9",
    "rich>=13",
    "pydantic>=1.10,<2",
]
EXTRAS_REQUIRE = {"test": ["pytest", "hypothesis"]}
PYTHON_REQUIRES = ">=3.8,<4"

with open("README.md", "r") as fh:
    LONG_DESCRIPTION = fh.read()

setup(
    name=NAME,
    version=VERSION,
    license=LICENSE,
    description=DESCRIPTION,
    long_description=LONG_DESCRIPTION,
    long_description_content_type="text/markdown",
    keywords=KEYWORDS,
    classifiers=CLASSIFIERS,
    packages=["paircam"],
    include_package_data=True,
    entry_points={
        "console_scripts": [
            "paircam=paircam.__main__:main",
        ],
    },
    install_requires=INSTALL_REQUIRES,
    extras_require=EXTRAS_REQUIRE,
    python_requires=PYTHON_REQUIRES,
)
