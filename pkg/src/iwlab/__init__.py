"""Desk-scale experiments on how importance-weighted losses interact with
gradient training: exact max-margin convergence on separable 2-D data,
weighting-effect dissipation in small CNNs on image data, and covariate-
shift correction through superclass construction."""

__version__ = "0.1.0"
