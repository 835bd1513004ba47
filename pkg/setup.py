from setuptools import setup

setup(
    version='0.1.0',
    name='dbea',
    packages=['dbea'],
    license='MIT',
    description='Tandem-head out-of-distribution detection for set-prediction object detectors',
    install_requires=['numpy', 'scipy', 'scikit-learn', 'matplotlib>=3.4', 'IPython', 'PyYAML'],
    extras_require={'test': ['pytest']},
    entry_points={'console_scripts': ['dbea=dbea.cli:main']},
    python_requires='>=3.8',
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
      ],
    keywords='object detection out-of-distribution uncertainty',
)
