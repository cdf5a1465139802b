"""Rectified-flow super-resolution with HR-regularised consistency distillation."""

__version__ = "0.1.0"
