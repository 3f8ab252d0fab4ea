import os
import re
from typing import List

from setuptools import find_packages, setup

HERE = os.path.dirname(os.path.abspath(__file__))


def read(name: str) -> str:
    with open(os.path.join(HERE, name), encoding="utf8") as f:
        return f.read()


def get_version(package: str) -> str:
    """`__version__` from the package's `__init__.py`."""
    match = re.search(
        r"^__version__ = ['\"]([^'\"]+)['\"]",
        read(os.path.join(package, "__init__.py")),
        re.MULTILINE,
    )
    return match.group(1) if match else "0.0.0"


def get_install_requires() -> List[str]:
    lines = (line.strip() for line in read("requirements.txt").splitlines())
    return [line for line in lines if line and not line.startswith("#")]


setup(
    name="persona-bench",
    version=get_version("persona_bench"),
    license="MIT",
    description="Benchmark how prompted personality traits shape the language of chat agents.",
    long_description=read("README.md"),
    long_description_content_type="text/markdown",
    author="Persona Bench contributors",
    maintainer="Persona Bench contributors",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={"persona_bench": ["data/*"]},
    python_requires=">=3.8",
    entry_points={"console_scripts": ["persona-bench=persona_bench:main"]},
    install_requires=get_install_requires(),
)
