"""Heterogeneous multi-agent teaming under uncertainty."""
