from setuptools import setup, find_packages

setup(
    name="popkit",
    version="0.1",
    packages=find_packages(exclude=["tests"]),
    py_modules=[
        'app',
        'config',
        'experiments',
        'logging_config',
        'path_analysis',
        'protocol',
        'reachability',
        'run',
        'scheduler',
    ],
    include_package_data=True,
    install_requires=[
        'click>=8.1,<8.2',
        'python-dotenv',
        'numpy',
        'pandas',
        'scipy',
    ],
    extras_require={
        'test': ['pytest', 'pytest-cov', 'hypothesis'],
    },
    entry_points={
        'console_scripts': [
            'popkit=run:main',
        ],
    },
)
