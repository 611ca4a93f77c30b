"""Frozen-encoder per-token hidden-state extraction to TRMQEMB1 files."""

__version__ = "0.1.0"
