"""stepreg: multi-step point cloud registration with step-conditioned models."""

__version__ = "0.1.0"
