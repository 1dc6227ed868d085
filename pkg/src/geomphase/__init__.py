"""Adiabatic geometric phases for parametric Hamiltonians and the moving-wall box."""
__version__ = "0.1.0"
