"""Spin and optical models of SiC divacancy qubits with parameter inference."""

__version__ = "0.1.0"
