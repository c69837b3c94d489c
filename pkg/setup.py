#!/usr/bin/env python
"""
Installation file for floorba
"""

import setuptools
import os

# Where is the installation?
install_from = 'src'
# Where is the master __init__ file?
install_init = 'src/floorba/__init__.py'


# scans __init__.py for the __version__ string
def get_version():
    lookfor = '__version__'
    localtemp = {lookfor:'0.0'}
    with open(install_init,'r') as init_file:
        for line in init_file:
            if line.startswith(lookfor):
                exec(line, {}, localtemp)
                break
    return localtemp[lookfor]

# Load the README for the long description
with open('./README.md', 'r') as ff:
    readme = ff.read()

setuptools.setup(
    name='floorba',
    version=get_version(),
    description="Floorplan-aware bundle adjustment for RGB-D scans.",
    long_description=readme,
    long_description_content_type = "text/markdown",
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Image Recognition',
        'Natural Language :: English',
        'Programming Language :: Python :: 3'],
    license = 'GNU General Public License v3 (GPLv3)',
    keywords = 'bundle adjustment, RGB-D, floorplan, point cloud',
    packages=['floorba'],
    package_dir={'':install_from},
    package_data={'floorba':['config.py']},
    python_requires='>=3.7',
    install_requires=['numpy>=1.17', 'scipy>=1.4'],
    extras_require={'dev': ['pytest']},
    entry_points={'console_scripts': ['floorba=floorba.cli:main']},
    provides=['floorba']
    )
