"""Collaborative query rewriting over a user-entity feedback interaction graph."""

__version__ = "0.1.0"
