from setuptools import setup, find_packages
from codecs import open
from os import path

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

setup(
    name='hypergcl',
    version='0.1.0',
    description='Hypergraph contrastive learning with fabricated and generative augmentations',
    long_description=long_description,
    long_description_content_type='text/markdown',
    license='MIT',
    packages=find_packages(exclude=['contrib', 'docs', 'tests']),
    entry_points = {
        'console_scripts': [
            'hypergcl-cli=hypergcl.cli:main'
        ],
    },
    python_requires='>=3.7',
    install_requires=['numpy>=1.20', 'scipy>=1.4', 'scikit-learn>=0.22', 'aenum', 'prompt_toolkit>=2'],
    extras_require={
        'test': ['pytest'],
    },
)
