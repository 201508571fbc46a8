"""refloc3d: localize objects in 3D point-cloud scenes from text."""

__version__ = "0.1.0"
