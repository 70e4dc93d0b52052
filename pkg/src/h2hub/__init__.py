"""Equilibrium simulator for a hydrogen hub market with two producers."""

__version__ = "0.1.0"
