"""Two-layer trajectory planning for quadrotors among static and moving obstacles."""

__version__ = "0.1.0"
