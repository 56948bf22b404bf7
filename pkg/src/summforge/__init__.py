"""Toolchain for building and judging length-controllable call summarization models."""

__version__ = "0.1.0"
