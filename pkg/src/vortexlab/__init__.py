"""Numerical laboratory for the two-component Gudnason vortex system on a flat torus."""
from __future__ import annotations

__version__ = "0.1.0"
