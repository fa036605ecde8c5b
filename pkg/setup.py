"""
Setup script for installing the btcnn package.
"""
from setuptools import setup, find_packages

setup(
    name="btcnn",
    version="0.1.0",
    packages=find_packages('src'),
    package_dir={'': 'src'},
    entry_points={
        'console_scripts': ['btcnn=btcnn.__main__:main'],
    },
    install_requires=[
        'numpy>=1.24',
        'scipy>=1.10',
        'pandas>=2.0',
        'pillow>=10.1.0',
        'psutil>=5.9.0',
    ]
)
