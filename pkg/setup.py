import setuptools

with open('README.md', 'r') as fh:
    long_description = fh.read()

setuptools.setup(
    name='pysimba',
    version='0.1.0',
    author='pysimba contributors',
    description='Symmetry-guided point cloud completion with diffusion-predicted transformation fields and state-space refinement',
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=setuptools.find_packages(exclude=['tests']),
    install_requires=['numpy>=1.22', 'scipy>=1.8', 'psutil>=5.3', 'tqdm>=4.60'],
    classifiers=[
        'Programming Language :: Python :: 3',
        'License :: OSI Approved :: MIT License',
        'Operating System :: POSIX :: Linux',
        'Operating System :: MacOS :: MacOS X',
        'Operating System :: Microsoft :: Windows'
    ],
    python_requires='>=3.8'
)
