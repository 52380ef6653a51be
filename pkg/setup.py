from setuptools import setup, find_packages

setup(name='sbauth',
      version='0.1',
      description='One-to-many biometric identification over hashed random substrings of LSH bit strings',
      packages=find_packages(exclude=['tests']),
      zip_safe=False,
      python_requires='>=3.8',
      install_requires=[
          'numpy', 'scipy', 'cryptography', 'crc8'
      ],
      extras_require={
          'test': ['pytest']
      }
      )
