"""Diffusion VAE on the hypersphere.

The posterior over the latent sphere is the Brownian-motion heat kernel,
sampled by a projected Gaussian random walk; the KL against the uniform
prior uses the small-time closed form

    KL(t, d) = -(d/2) log(2 pi t) - d/2 + log Vol(S^d) + (1/4) d (d-1) t

and the training objective is  E[log p(x|z)] - beta * |KL - C|.

Two step rules are supported for the walk. ``verbatim`` perturbs by
eps * t each step; ``brownian`` perturbs by eps * sqrt(t/L), which makes
the L-step walk's total variance scale like t (diffusion time) and is
the default because it matches the closed-form KL's small-t statistics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry
from .autodiff import Tensor
from .errors import ShapeMismatch
from .geometry import UnitVector

# Posterior scale is softplus(raw) + T_FLOOR; keeps log(2 pi t) finite.
T_FLOOR = 1e-4

# Constant offset added before the encoder's projection so a zero MLP
# output never lands on the projection singularity.
PROJECTION_OFFSET = 0.1

STEP_MODES = ("verbatim", "brownian")

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PosteriorParams:
    """Location and diffusion time of the heat-kernel posterior."""

    mu_z: UnitVector
    t: float

    def __post_init__(self):
        if self.t < T_FLOOR:
            raise ValueError(f"t={self.t} below floor {T_FLOOR}")


@dataclass(frozen=True)
class WalkTrace:
    """A random walk realization: the noise draws and every visited state."""

    eps: list[np.ndarray]
    states: list[UnitVector]


@dataclass(frozen=True)
class ElboBreakdown:
    reconstruction_loglik: float
    kl: float
    capacity: float
    beta: float
    objective: float


def step_scale(t: float, walk_length: int, step_mode: str) -> float:
    """Per-step noise multiplier for the chosen walk rule."""
    if step_mode == "verbatim":
        return t
    if step_mode == "brownian":
        return math.sqrt(t / walk_length)
    raise ValueError(f"unknown step_mode {step_mode!r}")


def sample_posterior(
    params: PosteriorParams,
    walk_length: int,
    step_mode: str,
    rng: np.random.Generator | None = None,
    eps: list[np.ndarray] | None = None,
) -> WalkTrace:
    """Run the projected random walk from mu_z; returns the full trace.

    Noise draws may be supplied via ``eps`` for deterministic replay,
    otherwise they come from ``rng``.
    """
    if walk_length < 1:
        raise ValueError("walk_length must be >= 1")
    m = params.mu_z.coords.size
    if eps is None:
        if rng is None:
            raise ValueError("either rng or eps must be given")
        eps = [rng.standard_normal(m) for _ in range(walk_length)]
    elif len(eps) != walk_length:
        raise ShapeMismatch(f"need {walk_length} noise vectors, got {len(eps)}")
    s = step_scale(params.t, walk_length, step_mode)
    states = [params.mu_z]
    for e in eps:
        states.append(geometry.project(states[-1].coords + np.asarray(e, dtype=np.float64) * s))
    return WalkTrace(eps=[np.asarray(e, dtype=np.float64) for e in eps], states=states)


def sample_posterior_rows(
    mu: np.ndarray,
    t: np.ndarray,
    walk_length: int,
    step_mode: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized walk: mu is (B, d+1), t is (B,); returns final states."""
    mu = np.asarray(mu, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    if step_mode == "verbatim":
        s = t
    elif step_mode == "brownian":
        s = np.sqrt(t / walk_length)
    else:
        raise ValueError(f"unknown step_mode {step_mode!r}")
    z = mu
    for _ in range(walk_length):
        z = geometry.project_rows(z + rng.standard_normal(mu.shape) * s)
    return z


def kl_divergence(t: float, d: int) -> float:
    """Closed-form KL(posterior || uniform) in nats."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if t < T_FLOOR:
        raise ValueError(f"t={t} below floor {T_FLOOR}")
    return (
        -0.5 * d * math.log(2.0 * math.pi * t)
        - 0.5 * d
        + geometry.log_sphere_volume(d)
        + 0.25 * d * (d - 1) * t
    )


def kl_divergence_dt(t: float, d: int) -> float:
    """Derivative of the closed-form KL with respect to t."""
    return -0.5 * d / t + 0.25 * d * (d - 1)


def reconstruction_loglik(x: np.ndarray, mu_x: np.ndarray) -> float:
    """Log density of x under N(mu_x, I): -||x - mu_x||^2 / 2 - (n/2) log 2 pi."""
    x = np.asarray(x, dtype=np.float64)
    mu_x = np.asarray(mu_x, dtype=np.float64)
    if x.shape != mu_x.shape:
        raise ShapeMismatch(f"x {x.shape} vs mu_x {mu_x.shape}")
    r = x - mu_x
    return float(-0.5 * np.dot(r, r) - 0.5 * x.size * _LOG_2PI)


def elbo(
    x: np.ndarray,
    params: PosteriorParams,
    decoder,
    beta: float,
    capacity: float,
    walk_length: int,
    step_mode: str,
    rng: np.random.Generator | None = None,
    eps: list[np.ndarray] | None = None,
) -> ElboBreakdown:
    """Single-sample objective estimate: one walk, analytic KL.

    ``decoder`` maps a latent embedding vector to a reconstruction mean.
    """
    trace = sample_posterior(params, walk_length, step_mode, rng=rng, eps=eps)
    recon = reconstruction_loglik(x, decoder(trace.states[-1].coords))
    kl = kl_divergence(params.t, params.mu_z.d)
    objective = recon - beta * abs(kl - capacity)
    return ElboBreakdown(recon, kl, capacity, beta, objective)


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class DiffusionVAE:
    """Encoder/decoder MLPs plus the differentiable objective graph.

    Parameters live in an ordered name -> Tensor mapping so checkpoints
    can serialize them in a stable order. The encoder trunk is shared by
    the location head (projected onto the sphere) and the scale head
    (softplus + floor).
    """

    def __init__(self, input_dim: int, d: int, hidden: tuple[int, ...] = (64, 64)):
        if input_dim < 1 or d < 1 or not hidden:
            raise ValueError("input_dim, d and hidden widths must be positive")
        self.input_dim = int(input_dim)
        self.d = int(d)
        self.hidden = tuple(int(h) for h in hidden)
        offset = np.zeros(self.d + 1)
        offset[-1] = PROJECTION_OFFSET
        self._offset = offset

    def init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        p: dict[str, Tensor] = {}
        dims = (self.input_dim,) + self.hidden
        for i in range(len(self.hidden)):
            p[f"enc_w{i}"] = Tensor(_glorot(rng, dims[i + 1], dims[i]), requires_grad=True)
            p[f"enc_b{i}"] = Tensor(np.zeros(dims[i + 1]), requires_grad=True)
        trunk = self.hidden[-1]
        p["enc_wmu"] = Tensor(_glorot(rng, self.d + 1, trunk), requires_grad=True)
        p["enc_bmu"] = Tensor(np.zeros(self.d + 1), requires_grad=True)
        p["enc_wt"] = Tensor(_glorot(rng, 1, trunk), requires_grad=True)
        p["enc_bt"] = Tensor(np.zeros(1), requires_grad=True)
        dims = (self.d + 1,) + self.hidden
        for i in range(len(self.hidden)):
            p[f"dec_w{i}"] = Tensor(_glorot(rng, dims[i + 1], dims[i]), requires_grad=True)
            p[f"dec_b{i}"] = Tensor(np.zeros(dims[i + 1]), requires_grad=True)
        p["dec_wout"] = Tensor(_glorot(rng, self.input_dim, self.hidden[-1]), requires_grad=True)
        p["dec_bout"] = Tensor(np.zeros(self.input_dim), requires_grad=True)
        return p

    def encode_graph(self, params: dict[str, Tensor], x: Tensor) -> tuple[Tensor, Tensor]:
        """Build (mu_z, t) tensors for a (B, input_dim) batch."""
        h = x
        for i in range(len(self.hidden)):
            h = ad.tanh(ad.affine(h, params[f"enc_w{i}"], params[f"enc_b{i}"]))
        raw = ad.affine(h, params["enc_wmu"], params["enc_bmu"]) + Tensor(self._offset)
        mu = ad.sphere_project(raw)
        t = ad.softplus(ad.affine(h, params["enc_wt"], params["enc_bt"])) + T_FLOOR
        return mu, t

    def decode_graph(self, params: dict[str, Tensor], z: Tensor) -> Tensor:
        h = z
        for i in range(len(self.hidden)):
            h = ad.tanh(ad.affine(h, params[f"dec_w{i}"], params[f"dec_b{i}"]))
        return ad.affine(h, params["dec_wout"], params["dec_bout"])

    def elbo_graph(
        self,
        params: dict[str, Tensor],
        x_batch: np.ndarray,
        beta: float,
        capacity: float,
        walk_length: int,
        step_mode: str,
        eps: np.ndarray,
    ) -> dict[str, Tensor]:
        """Differentiable batch objective; eps has shape (L, B, d+1).

        Gradients flow into t both through the KL term and through the
        walk's step scale, and into mu_z through every projection.
        """
        x_batch = np.asarray(x_batch, dtype=np.float64)
        batch = x_batch.shape[0]
        if eps.shape != (walk_length, batch, self.d + 1):
            raise ShapeMismatch(
                f"eps shape {eps.shape} != {(walk_length, batch, self.d + 1)}"
            )
        x = Tensor(x_batch)
        mu, t = self.encode_graph(params, x)

        if step_mode == "verbatim":
            s = t
        elif step_mode == "brownian":
            s = ad.sqrt(ad.scale(t, 1.0 / walk_length))
        else:
            raise ValueError(f"unknown step_mode {step_mode!r}")
        z = mu
        for l in range(walk_length):
            z = ad.sphere_project(z + Tensor(eps[l]) * s)

        mu_x = self.decode_graph(params, z)
        recon = ad.scale(ad.row_squared_norm(x - mu_x), -0.5) + (
            -0.5 * self.input_dim * _LOG_2PI
        )

        d = self.d
        kl = (
            ad.scale(ad.log(t), -0.5 * d)
            + ad.scale(t, 0.25 * d * (d - 1))
            + (-0.5 * d * _LOG_2PI - 0.5 * d + geometry.log_sphere_volume(d))
        )
        kl = ad.reshape(kl, (batch,))

        objective_vec = recon - ad.scale(ad.absolute(kl - capacity), beta)
        return {
            "objective": ad.mean_all(objective_vec),
            "recon": recon,
            "kl": kl,
            "z": z,
            "mu": mu,
            "t": t,
        }

    def encode(self, params: dict[str, Tensor], x_batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior parameters for a batch, as plain arrays."""
        mu, t = self.encode_graph(params, Tensor(np.asarray(x_batch, dtype=np.float64)))
        return mu.data, t.data.reshape(-1)

    def decode(self, params: dict[str, Tensor], z: np.ndarray) -> np.ndarray:
        return self.decode_graph(params, Tensor(np.asarray(z, dtype=np.float64))).data
