from __future__ import print_function, unicode_literals
from distutils.core import setup

setup(
    name='HeadPoser',
    version='0.1',
    packages=['HeadPoser', 'HeadPoser.tests'],
    package_data={'HeadPoser': ['headposer_config.json', 'data/stencils/*.pgm']},
    scripts=['HeadPoser/main.py'],
    license='MIT',
    description='Head pose estimation from facial feature constellations'
                ' and the perspective three-point problem.'
)
