"""Install loopgraph."""
import setuptools
from os import path

this_directory = path.abspath(path.dirname(__file__))
with open(path.join(this_directory, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

setuptools.setup(
    name="loopgraph",
    version="0.1.0",
    description="Loopgraph is a front-end agnostic LiDAR SLAM back-end:"
    + " place recognition, loop constraints and pose-graph optimization on top"
    + " of any odometry.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    package_dir={"": "src"},
    package_data={"loopgraph": ["py.typed", "documentation.md"]},  # mypy exports
    packages=setuptools.find_namespace_packages(where="src"),
    # Dependencies
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.20",
        "scipy>=1.7",
        "loguru",
        "click",
        "chevron",
    ],
    entry_points="""
        [console_scripts]
        loopgraph=loopgraph._cli:main
    """,
    classifiers=[
        "Development Status :: 3 - Alpha",
        #
        "Typing :: Typed",
        #
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        #
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering",
    ],
    keywords="slam lidar loop-closure pose-graph icp point-cloud robotics",
)
