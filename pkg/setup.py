from setuptools import setup

setup(
    name='mvmatch',
    version='0.1',
    packages=['mvmatch'],
    package_data={'mvmatch': ['resources/*.yaml']},
    license='BSD',
    description='Multi-view person matching with constrained clustering '
                'and 3D pose reconstruction from uncalibrated cameras',
    python_requires='>=3.8',
    install_requires=[
        'numpy',
        'scipy',
        'networkx',
        'scikit-learn',
        'opencv-python-headless',
        'pyparsing>=3',
        'PyYAML',
    ],
    tests_require=[
        'hypothesis',
    ],
    entry_points={
        'console_scripts': ['mvmatch = mvmatch.cli:main'],
    },
)
