"""Attention-based multi-view text recognition built on a small numpy autodiff engine."""

__version__ = "0.1.0"
