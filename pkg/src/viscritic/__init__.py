"""Toolchain for building visualization-critique datasets and judging critique quality."""

__version__ = "0.1.0"
