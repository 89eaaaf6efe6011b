"""Convolutional forecasting on grids with learnable localization.

A small numpy autodiff engine, convolution and localization blocks, a
model zoo, synthetic benchmarks, grid embedding and a training harness.
"""
from .tensor import ShapeError, Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "backward", "ShapeError", "__version__"]
