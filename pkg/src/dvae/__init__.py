"""Diffusion VAE with a hyperspherical latent space."""

import os as _os

# Cap BLAS worker threads before numpy loads its backend. Default 1 for
# bit-determinism; DVAE_THREADS raises the cap. Explicitly set backend
# variables win.
_threads = _os.environ.get("DVAE_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)
del _os, _threads, _var

from .geometry import UnitVector, geodesic_distance, project, sphere_volume, uniform_sample
from .model import (
    DiffusionVAE,
    ElboBreakdown,
    PosteriorParams,
    WalkTrace,
    elbo,
    kl_divergence,
    reconstruction_loglik,
    sample_posterior,
)
from .training import TrainConfig, capacity_schedule, init_train_state, train_epoch

__all__ = [
    "UnitVector",
    "geodesic_distance",
    "project",
    "sphere_volume",
    "uniform_sample",
    "DiffusionVAE",
    "ElboBreakdown",
    "PosteriorParams",
    "WalkTrace",
    "elbo",
    "kl_divergence",
    "reconstruction_loglik",
    "sample_posterior",
    "TrainConfig",
    "capacity_schedule",
    "init_train_state",
    "train_epoch",
]
