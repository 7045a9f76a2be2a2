"""Dual-stream volumetric classifier with hybrid 2D/3D blocks and mutual attention."""
from .tensor import Axis, Tape, Tensor, backward, default_dtype, set_default_dtype

__all__ = ["Axis", "Tape", "Tensor", "backward", "default_dtype", "set_default_dtype"]
__version__ = "0.1.0"
