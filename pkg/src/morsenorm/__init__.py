"""Linearization of gradient fields near nondegenerate critical points."""

__version__ = "0.1.0"
