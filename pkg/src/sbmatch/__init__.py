"""Coupled bridge matching between sampled distributions.

Learns the forward and backward drifts of a Schrödinger bridge from samples
of the two endpoint distributions, checks the result against analytically
constructed bridge oracles, and ships the whole thing behind a small HTTP
service with a thin command-line client.
"""

__version__ = "0.1.0"

from .rng import GaussianSpec, MixtureSpec, RngStream, gaussian_sample, mixture_sample

__all__ = [
    "GaussianSpec",
    "MixtureSpec",
    "RngStream",
    "gaussian_sample",
    "mixture_sample",
    "__version__",
]
