"""Primitives on the unit hypersphere S^d embedded in R^(d+1).

Everything here is a pure function over float64 arrays; the only stateful
argument is a caller-owned numpy Generator. Points on the sphere are held
in their ambient (d+1)-dimensional embedding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVector

# Below this norm a projection is numerically meaningless.
EPS_PROJECT = 1e-12

# How far off unit norm a UnitVector is allowed to drift.
UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class UnitVector:
    """A point on S^d, stored as its (d+1)-coordinate embedding."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=np.float64, copy=True)
        if c.ndim != 1 or c.size < 2:
            raise ValueError("UnitVector needs a 1-d array of length >= 2")
        if abs(float(np.linalg.norm(c)) - 1.0) > UNIT_NORM_TOL:
            raise ValueError("coordinates are not unit norm")
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    @property
    def d(self) -> int:
        """Intrinsic sphere dimension (ambient dimension minus one)."""
        return self.coords.size - 1


def project(v: np.ndarray) -> UnitVector:
    """Radial projection v -> v / ||v|| onto the sphere.

    Raises DegenerateVector when ||v|| <= EPS_PROJECT.
    """
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n <= EPS_PROJECT:
        raise DegenerateVector(f"cannot project vector with norm {n:.3e}")
    return UnitVector(v / n)


def project_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise radial projection for a (B, d+1) array (or a single vector)."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms <= EPS_PROJECT):
        raise DegenerateVector("row with norm below projection threshold")
    return x / norms


def project_jacobian(v: np.ndarray) -> np.ndarray:
    """Jacobian of the radial projection at v: (I - u u^T) / ||v||."""
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n <= EPS_PROJECT:
        raise DegenerateVector(f"cannot differentiate projection at norm {n:.3e}")
    u = v / n
    return (np.eye(v.size) - np.outer(u, u)) / n


def uniform_sample(d: int, rng: np.random.Generator) -> UnitVector:
    """Draw from the rotation-invariant measure on S^d."""
    if d < 1:
        raise ValueError("d must be >= 1")
    while True:
        g = rng.standard_normal(d + 1)
        n = float(np.linalg.norm(g))
        if n > EPS_PROJECT:  # zero draw has measure zero; resample
            return UnitVector(g / n)


def uniform_sample_rows(d: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized uniform sampling; returns a (count, d+1) array of unit rows."""
    if d < 1:
        raise ValueError("d must be >= 1")
    g = rng.standard_normal((count, d + 1))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    bad = norms[:, 0] <= EPS_PROJECT
    while np.any(bad):
        g[bad] = rng.standard_normal((int(bad.sum()), d + 1))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        bad = norms[:, 0] <= EPS_PROJECT
    return g / norms


def geodesic_distance(u: UnitVector, v: UnitVector) -> float:
    """Great-circle distance in radians, in [0, pi]."""
    dot = float(np.dot(u.coords, v.coords))
    return math.acos(max(-1.0, min(1.0, dot)))


def geodesic_distance_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise geodesic distance between matching unit rows."""
    dots = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.arccos(dots)


def log_sphere_volume(d: int) -> float:
    """log Vol(S^d) = log 2 + ((d+1)/2) log pi - lgamma((d+1)/2)."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return math.log(2.0) + 0.5 * (d + 1) * math.log(math.pi) - math.lgamma(0.5 * (d + 1))


def sphere_volume(d: int) -> float:
    """Surface volume of S^d; d=1 gives 2*pi, d=2 gives 4*pi."""
    return math.exp(log_sphere_volume(d))
