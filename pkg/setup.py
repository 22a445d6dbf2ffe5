"""
Setup script para demlab
Instala el paquete y el comando demlab
"""

from pathlib import Path

from setuptools import find_packages, setup


def read_requirements():
    """Dependencias de ejecución desde requirements.txt (sin herramientas de desarrollo)"""
    runtime = []
    for line in Path(__file__).with_name("requirements.txt").read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.split("==", 1)[0] in ("pytest", "black", "isort", "flake8", "mypy"):
            continue
        runtime.append(line)
    return runtime


setup(
    name="demlab",
    version="1.0.0",
    description="Estadística para experimentación digital: tests, monitoreo secuencial, "
                "errores estándar por bootstrap y diseño de experimentos",
    packages=find_packages(include=["demlab", "demlab.*"]),
    python_requires=">=3.10",
    install_requires=read_requirements(),
    extras_require={"dev": ["pytest", "black", "isort", "flake8", "mypy"]},
    entry_points={"console_scripts": ["demlab=demlab.cli.expcli:main"]},
)
