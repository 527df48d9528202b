"""Limited-angle tomography stability laboratory."""

__version__ = "0.1.0"
