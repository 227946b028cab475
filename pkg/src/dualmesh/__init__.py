"""Dual-mesh convolutional networks for 3D shape correspondence."""

__version__ = "0.1.0"

from .dual import PAD, DualGraph, build_dual, order_neighbors
from .mesh import Mesh, is_watertight, load_mesh, save_mesh

__all__ = ["PAD", "DualGraph", "Mesh", "build_dual", "is_watertight", "load_mesh",
           "order_neighbors", "save_mesh"]
