"""Climate-based pre-screening of dryland restoration sites."""

__version__ = "0.1.0"
