"""Numerical lab for essential self-adjointness of Klein-Gordon type operators on R x S^1."""

__version__ = "0.1.0"
