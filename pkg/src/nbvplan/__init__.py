"""Next-best-view planning from per-facet photo-consistency."""

__version__ = "0.1.0"
