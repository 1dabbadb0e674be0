"""Two-step vessel-element identification pipeline for macerated hardwood slides."""

__version__ = "0.1.0"
