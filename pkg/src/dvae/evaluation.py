"""Validation oracles and representation diagnostics.

The circle oracle integrates the wrapped normal density numerically and
is the independent check on the closed-form KL at d=1. Factor recovery
fits a great circle to the latent cloud (top-2 principal directions) and
scores the projected angles against the true angles with the Fisher-Lee
circular correlation, which is invariant to rotation and reflection of
either variable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDirection
from .geometry import UnitVector, geodesic_distance

WRAP_TERMS = 10  # wrapped-normal truncation |k| <= WRAP_TERMS


@dataclass(frozen=True)
class RecoveryScore:
    circular_correlation: float
    explained_variance_top2: float
    degenerate: bool


@dataclass(frozen=True)
class TraversalReport:
    path: list[UnitVector]
    decodes: np.ndarray
    csv_path: str | None


def wrapped_normal_pdf(phi: np.ndarray, t: float) -> np.ndarray:
    """Density of Brownian motion on the circle at time t, started at 0."""
    phi = np.asarray(phi, dtype=np.float64)
    q = np.zeros_like(phi)
    norm = 1.0 / math.sqrt(2.0 * math.pi * t)
    for k in range(-WRAP_TERMS, WRAP_TERMS + 1):
        shifted = phi + 2.0 * math.pi * k
        q += norm * np.exp(-0.5 * shifted * shifted / t)
    return q


def kl_oracle_circle(t: float, grid_size: int = 4096) -> float:
    """KL(wrapped normal || uniform on S^1) by midpoint quadrature."""
    if not 1e-3 <= t <= 50.0:
        raise ValueError("t outside supported oracle range")
    if grid_size < 1024:
        raise ValueError("grid_size must be >= 1024")
    step = 2.0 * math.pi / grid_size
    phi = -math.pi + (np.arange(grid_size) + 0.5) * step
    q = wrapped_normal_pdf(phi, t)
    integrand = np.where(q > 0.0, q * np.log(2.0 * math.pi * np.maximum(q, 1e-300)), 0.0)
    return float(np.sum(integrand) * step)


def circular_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Fisher-Lee circular correlation between two angle samples.

    Uses the O(N) expansion of the pairwise sums of sin(a_i - a_j)
    sin(b_i - b_j).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two equal-length angle vectors")
    sa, ca = np.sin(a), np.cos(a)
    sb, cb = np.sin(b), np.cos(b)
    # sum_ij sin(ai-aj) sin(bi-bj) expands to 2 (AB - CD)
    num = 2.0 * (
        np.sum(sa * sb) * np.sum(ca * cb) - np.sum(sa * cb) * np.sum(ca * sb)
    )

    def pair_sin_sq(x):
        # sum_ij sin^2(xi - xj) = (n^2 - |sum exp(2i x)|^2) / 2
        n = x.size
        c2 = np.sum(np.cos(2.0 * x))
        s2 = np.sum(np.sin(2.0 * x))
        return 0.5 * (n * n - (c2 * c2 + s2 * s2))

    den = math.sqrt(max(pair_sin_sq(a) * pair_sin_sq(b), 0.0))
    if den == 0.0:
        return 0.0
    return float(num / den)


def recover_periodic_factor(codes, true_angles) -> RecoveryScore:
    """Score how well a latent cloud encodes a periodic factor.

    Codes are projected onto their top-2 principal directions; the
    resulting plane angles are compared to the true angles. The score is
    the absolute circular correlation, so any rotation, reflection, or
    offset of the latent circle is absorbed. Clouds whose top-2 explained
    variance is below 50% are reported degenerate with score 0.
    """
    if len(codes) and isinstance(codes[0], UnitVector):
        codes = np.stack([c.coords for c in codes])
    codes = np.asarray(codes, dtype=np.float64)
    angles = np.asarray(true_angles, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] != angles.size:
        raise ValueError("codes must be (N, d+1) matching true_angles")
    if codes.shape[0] < 10:
        raise ValueError("need at least 10 codes")
    # A great circle is the sphere's slice by a plane through the origin,
    # so the plane fit uses uncentered second moments.
    _, svals, vt = np.linalg.svd(codes, full_matrices=False)
    total = float(np.sum(svals * svals))
    top2 = float(np.sum(svals[:2] * svals[:2]))
    explained = top2 / total if total > 0.0 else 0.0
    if explained < 0.5:
        return RecoveryScore(0.0, explained, True)
    p1 = codes @ vt[0]
    p2 = codes @ vt[1]
    phi = np.arctan2(p2, p1)
    rho = abs(circular_correlation(phi, angles))
    return RecoveryScore(rho, explained, False)


def great_circle_path(center: UnitVector, direction: np.ndarray, steps: int) -> list[UnitVector]:
    """`steps` equally spaced points on the full great circle through
    center in the (center, direction) plane; point 0 is the center."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    c = center.coords
    v = np.asarray(direction, dtype=np.float64)
    if v.shape != c.shape:
        raise DegenerateDirection(f"direction shape {v.shape} != center {c.shape}")
    w = v - np.dot(v, c) * c
    norm = float(np.linalg.norm(w))
    if norm <= 1e-9:
        raise DegenerateDirection("direction is (anti)parallel to the center")
    w = w / norm
    path = []
    for k in range(steps):
        a = 2.0 * math.pi * k / steps
        path.append(UnitVector(math.cos(a) * c + math.sin(a) * w))
    return path


def traverse(
    decoder,
    center: UnitVector,
    direction: np.ndarray,
    steps: int,
    csv_path=None,
) -> TraversalReport:
    """Decode a closed great-circle sweep; optionally write it as CSV."""
    path = great_circle_path(center, direction, steps)
    decodes = np.stack([np.asarray(decoder(p.coords), dtype=np.float64) for p in path])
    if csv_path is not None:
        m = center.coords.size
        header = [f"z{j}" for j in range(m)] + [f"x{j}" for j in range(decodes.shape[1])]
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for p, dec in zip(path, decodes):
                row = [format(v, ".17g") for v in p.coords]
                row += [format(v, ".17g") for v in dec]
                fh.write(",".join(row) + "\n")
    return TraversalReport(path=path, decodes=decodes, csv_path=None if csv_path is None else str(csv_path))


def path_spacing_is_uniform(path: list[UnitVector], tol: float = 1e-9) -> bool:
    """Check consecutive geodesic gaps are equal within tol (closed loop)."""
    gaps = [
        geodesic_distance(path[i], path[(i + 1) % len(path)]) for i in range(len(path))
    ]
    return max(gaps) - min(gaps) <= tol
