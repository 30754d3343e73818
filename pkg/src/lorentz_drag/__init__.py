"""Rigid-body motion in a special Lorentz gas: kinetic characteristics, recollision
drag and long-time velocity decay."""

__version__ = "0.1.0"
