"""Support-removal planning for additively manufactured parts."""

__version__ = "0.1.0"
