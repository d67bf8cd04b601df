from setuptools import Extension, setup

setup(
    ext_modules=[
        Extension("chronoflow._crc32c", sources=["src/chronoflow/_crc32c.c"]),
    ]
)
