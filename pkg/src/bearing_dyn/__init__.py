"""Rolling-ball bearing dynamics: spherical and planar bearings, their first
integrals and invariant measures, and a scenario runner that checks them."""

from . import geometry, integrators, oracle, planar, spherical, verification

__all__ = ["geometry", "integrators", "oracle", "planar", "spherical", "verification"]
__version__ = "0.1.0"
