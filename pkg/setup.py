#!/usr/bin/env python3
"""
Setup script for dialogkit
"""

from pathlib import Path

from setuptools import find_packages, setup

here = Path(__file__).parent


def read_requirements():
    """Runtime requirements: everything above the testing group"""
    requirements = []
    for line in (here / 'requirements.txt').read_text(encoding='utf-8').splitlines():
        line = line.strip()
        if line.startswith('# Testing'):
            break
        if line and not line.startswith('#'):
            requirements.append(line)
    return requirements + ['python-dotenv==1.0.0', 'structlog==23.2.0']


setup(
    name='dialogkit',
    version='0.1.0',
    description='Speaker-attributed clinical dialogue toolkit: diarization stitching, DER, tcpWER, ROUGE',
    long_description=(here / 'README.md').read_text(encoding='utf-8'),
    long_description_content_type='text/markdown',
    packages=find_packages(exclude=['tests', 'tests.*']),
    python_requires='>=3.9',
    install_requires=read_requirements(),
    extras_require={
        'dev': ['pytest==7.4.3', 'pytest-cov==4.1.0', 'black==23.11.0', 'flake8==6.1.0', 'mypy==1.7.1'],
    },
    entry_points={
        'console_scripts': ['dialogkit=dialogkit.cli:main'],
    },
)
