"""Language-guided instance scene representation for end-to-end driving, at desk scale."""

__version__ = "0.1.0"
