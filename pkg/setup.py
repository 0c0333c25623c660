#!/usr/bin/env python

#
# qgreybox
#
# This program is free software; you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation; either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program; if not, write to the Free Software Foundation,
# Inc., 51 Franklin Street, Fifth Floor, Boston, MA 02110-1301  USA
#

import re

from setuptools import setup

# importing qgreybox needs numpy and torch
with open("qgreybox/__init__.py") as f:
    __version__ = re.search(r"^__version__ = ['\"](.+)['\"]$", f.read(), re.MULTILINE).group(1)

DESCRIPTION = "Greybox emulator and optimal control for a qubit under classical dephasing noise"


setup(
    name='qgreybox',
    version=__version__,
    packages=[
        'qgreybox',
    ],
    license='GPLv3+',
    description=DESCRIPTION,
    long_description=open('README.md').read(),
    long_description_content_type='text/markdown',
    python_requires='>=3.8',
    install_requires=[
        'numpy',
        'scipy',
        'torch',
    ],
    extras_require={
        'test': [
            'pytest',
        ],
    },
    entry_points={
        "console_scripts": [
            "qgreybox = qgreybox.__main__:main",
        ]
    },
    classifiers=[
        'Development Status :: 4 - Beta',
        'Environment :: Console',
        'License :: OSI Approved :: GNU General Public License v3 or later (GPLv3+)',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Physics',
    ],
)
