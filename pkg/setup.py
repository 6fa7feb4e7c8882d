from setuptools import setup, find_packages

setup(
    name="votecraft",
    version="0.1.1",
    packages=find_packages("src"),
    package_dir={"": "src"},
    description="votecraft: closed-form 3D keypoint voting and pose benchmarks",
    author="votecraft developers",
    author_email="",
    python_requires=">=3.9",
    install_requires=[
        "networkx>=3.4.0",
        "numpy>=1.22.0",
        "scipy>=1.8.0",
        "pyyaml>=6.0",
    ],
    extras_require={"dev": ["pytest>=8.0"]},
    entry_points={"console_scripts": ["votecraft=votecraft.cli:main"]},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering :: Image Recognition",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
