"""Least-cost energy management for series hybrid electric vehicles."""

__version__ = "0.1.0"
