# coding: utf-8
# Root-level conftest: puts the repository root on sys.path so the tests
# import the working tree without an install.
