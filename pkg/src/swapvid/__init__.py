"""Swapped spatiotemporal cross-attention video diffusion, clip curation,
and attention efficiency benchmarks on a self-contained autodiff core."""

from .tensor import GradTape, Tensor, no_tape

__all__ = ["Tensor", "GradTape", "no_tape"]
__version__ = "0.1.0"
