"""Tiled segmentation toolkit for C-fos micrographs."""

__version__ = "0.1.0"
