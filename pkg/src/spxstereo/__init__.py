"""Superpixel cost-volume excitation and superpixel cross-entropy supervision for stereo matching."""
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
