"""Persona-conditioned comment simulation harness for threaded Reddit conversations."""

__version__ = "0.1.0"
