"""Chance-constrained three-phase OPF and learned local DER control."""
__version__ = "0.1.0"
