"""Numerical laboratory for finite-width Gram matrices, infinite-width
kernel recursions, and full-batch gradient-descent experiments on deep
fully-connected, residual, and convolutional-residual networks."""

__version__ = "0.1.0"
