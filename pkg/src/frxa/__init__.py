"""Face-region expression analysis toolkit."""

__version__ = "0.1.0"
