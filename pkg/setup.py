from setuptools import setup, find_packages

setup(
    name="taco_icl",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={"taco_icl": ["config/*.yml"]},
    install_requires=[
        "numpy>=1.20.0",
        "pandas>=1.3.0",
        "scikit-learn>=0.24.0",
        "pyzmq>=22.0.0",
        "sqlalchemy>=1.4.0",
        "pyyaml>=6.0",
        "python-dotenv>=0.19.0",
        "click>=8.0.0",
        "tqdm>=4.62.0",
    ],
    extras_require={
        "test": ["pytest>=7.0"],
    },
    entry_points={
        "console_scripts": [
            "taco=taco_icl.scripts.cli:main",
        ],
    },
    author="TACO Developers",
    author_email="developer@example.com",
    description="Task-aware selection and ordering of in-context demonstrations for vision-language models",
    keywords="in-context learning, demonstration selection, transformer, beam search",
    python_requires=">=3.8",
)
