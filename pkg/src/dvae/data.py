"""Synthetic datasets with known generating factors, plus CSV ingestion.

The workhorse is a "bump on a ring": each observation is a Gaussian bump
in angle, sampled on a fixed grid of n ring positions, so the single true
factor is periodic. A two-factor variant adds a linear amplitude. Factor
labels are carried for evaluation only and are never seen by training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingColumn, ParseError

# Bump sharpness: exp(-KAPPA * angle^2) falls to 1/e at |angle| = pi/8,
# so the bump spans roughly n/8 grid entries regardless of n.
KAPPA = 64.0 / math.pi**2

FACTOR_KINDS = ("periodic", "linear")


@dataclass(frozen=True)
class LabeledDataset:
    """Observations plus ground-truth factor values.

    Periodic factors live in [0, 2pi); linear factors in [0, 1].
    """

    observations: np.ndarray  # (N, n)
    factors: np.ndarray  # (N, F)
    factor_kinds: tuple[str, ...]
    factor_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        fac = np.asarray(self.factors, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[0] < 1:
            raise ValueError("observations must be a nonempty (N, n) matrix")
        if fac.shape[0] != obs.shape[0] or fac.ndim != 2:
            raise ValueError("factors must be (N, F)")
        if len(self.factor_kinds) != fac.shape[1]:
            raise ValueError("one kind per factor column required")
        for k in self.factor_kinds:
            if k not in FACTOR_KINDS:
                raise ValueError(f"unknown factor kind {k!r}")
        if not np.all(np.isfinite(obs)):
            raise ValueError("observations must be finite")
        names = self.factor_names or tuple(f"f{i}" for i in range(fac.shape[1]))
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "factors", fac)
        object.__setattr__(self, "factor_kinds", tuple(self.factor_kinds))
        object.__setattr__(self, "factor_names", tuple(names))

    @property
    def n_samples(self) -> int:
        return self.observations.shape[0]

    @property
    def n_features(self) -> int:
        return self.observations.shape[1]


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    """Wrap to (-pi, pi]."""
    return np.mod(a + math.pi, 2.0 * math.pi) - math.pi


def ring_signal(theta: np.ndarray, n: int) -> np.ndarray:
    """Noiseless bump observations for angles theta; returns (N, n)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    grid = 2.0 * math.pi * np.arange(n) / n
    delta = _wrap_angle(theta[:, None] - grid[None, :])
    return np.exp(-KAPPA * delta * delta)


def make_ring(N: int, n: int, noise_sigma: float, seed: int) -> LabeledDataset:
    """Single periodic factor: a bump at a uniform random angle."""
    if N < 1 or n < 2:
        raise ValueError("need N >= 1 and n >= 2")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=N)
    obs = ring_signal(theta, n)
    if noise_sigma > 0.0:
        obs = obs + noise_sigma * rng.standard_normal(obs.shape)
    return LabeledDataset(
        observations=obs,
        factors=theta[:, None],
        factor_kinds=("periodic",),
        factor_names=("theta",),
    )


def make_ring_plus_scale(N: int, n: int, noise_sigma: float, seed: int) -> LabeledDataset:
    """Two factors: periodic bump angle and a linear amplitude in [0.5, 1]."""
    if N < 1 or n < 2:
        raise ValueError("need N >= 1 and n >= 2")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=N)
    s = rng.uniform(0.5, 1.0, size=N)
    obs = s[:, None] * ring_signal(theta, n)
    if noise_sigma > 0.0:
        obs = obs + noise_sigma * rng.standard_normal(obs.shape)
    return LabeledDataset(
        observations=obs,
        factors=np.column_stack([theta, s]),
        factor_kinds=("periodic", "linear"),
        factor_names=("theta", "scale"),
    )


def save_csv(dataset: LabeledDataset, path) -> None:
    """Write observations then factor columns; 17 significant digits."""
    n = dataset.n_features
    header = [f"x{j}" for j in range(n)]
    for name, kind in zip(dataset.factor_names, dataset.factor_kinds):
        header.append(f"f_{kind}_{name}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(dataset.n_samples):
            row = [format(v, ".17g") for v in dataset.observations[i]]
            row += [format(v, ".17g") for v in dataset.factors[i]]
            fh.write(",".join(row) + "\n")


def load_csv(path) -> LabeledDataset:
    """Parse a dataset written by save_csv (or hand-authored to match)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].strip():
        raise ParseError(f"{path}: missing header row")
    header = lines[0].split(",")
    n = 0
    while n < len(header) and header[n] == f"x{n}":
        n += 1
    if n == 0:
        raise MissingColumn(f"{path}: header must start with x0")
    kinds: list[str] = []
    names: list[str] = []
    for col in header[n:]:
        matched = False
        for kind in FACTOR_KINDS:
            prefix = f"f_{kind}_"
            if col.startswith(prefix):
                kinds.append(kind)
                names.append(col[len(prefix):])
                matched = True
                break
        if not matched:
            raise MissingColumn(f"{path}: unrecognized column {col!r}")
    if not kinds:
        raise MissingColumn(f"{path}: no factor columns found")
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        if not ln.strip():
            continue
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    mat = np.asarray(rows, dtype=np.float64)
    return LabeledDataset(
        observations=mat[:, :n],
        factors=mat[:, n:],
        factor_kinds=tuple(kinds),
        factor_names=tuple(names),
    )
