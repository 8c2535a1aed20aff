"""Sparse contextual bigram training laboratory (python bindings)."""

try:
    from ._scb import *  # noqa: F401,F403  (installed wheel layout)
except ImportError:
    from _scb import *  # noqa: F401,F403  (in-tree build on PYTHONPATH)
