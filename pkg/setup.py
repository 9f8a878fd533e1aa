from setuptools import setup

setup(name='AnchorSplat',
      version='0.1',
      description='mesh anchored Gaussian splats with surface deformation and attribute baking',
      packages=['AnchorSplat'],
      install_requires=[
          'numpy',
          'scipy',
          'networkx',
          'monty',
          'mpi4py',
          'matplotlib',
          'Pillow'
      ]
)
