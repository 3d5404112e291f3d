"""Training loop: capacity annealing, Adam updates, checkpointing.

Reproducibility contract: (seed, config, data) fully determine the run.
The seed feeds a Philox counter-based generator split into three streams
(weight init, epoch shuffling, walk noise); checkpoints persist the live
stream states so a resumed run is bit-identical to an uninterrupted one.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, zero_grads
from .errors import ConfigError, NonFiniteValue, ShapeMismatch
from .model import STEP_MODES, DiffusionVAE

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_WEIGHTS = "weights.bin"


@dataclass(frozen=True)
class TrainConfig:
    d: int = 10
    beta: float = 1.0
    walk_length: int = 5
    c_min: float = 0.0
    c_max: float = 15.0
    epochs: int = 300
    anneal_epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    step_mode: str = "brownian"
    hidden: tuple[int, ...] = (64, 64)
    checkpoint_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.walk_length < 1:
            raise ConfigError("walk_length must be >= 1")
        if self.c_min < 0 or self.c_max < self.c_min:
            raise ConfigError("need 0 <= c_min <= c_max")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 1 <= self.anneal_epochs <= self.epochs:
            raise ConfigError("need 1 <= anneal_epochs <= epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.step_mode not in STEP_MODES:
            raise ConfigError(f"step_mode must be one of {STEP_MODES}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        """Strict construction: unknown keys are rejected."""
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        return out


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    objective: float
    kl: float
    reconstruction: float
    capacity: float


@dataclass
class AdamMoments:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


@dataclass
class TrainState:
    model: DiffusionVAE
    params: dict[str, Tensor]
    moments: AdamMoments
    step_count: int
    epoch: int
    shuffle_rng: np.random.Generator
    walk_rng: np.random.Generator
    history: list[EpochReport] = field(default_factory=list)


def capacity_schedule(epoch: int, config: TrainConfig) -> float:
    """Linear ramp from c_min to c_max over anneal_epochs, then held."""
    if config.anneal_epochs == 1:
        return config.c_max
    frac = min(1.0, epoch / (config.anneal_epochs - 1))
    return config.c_min + (config.c_max - config.c_min) * frac


def _make_stream(ss: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(ss))


def init_train_state(config: TrainConfig, input_dim: int) -> TrainState:
    init_ss, shuffle_ss, walk_ss = np.random.SeedSequence(config.seed).spawn(3)
    model = DiffusionVAE(input_dim, config.d, config.hidden)
    params = model.init_params(_make_stream(init_ss))
    moments = AdamMoments(
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
    )
    return TrainState(
        model=model,
        params=params,
        moments=moments,
        step_count=0,
        epoch=0,
        shuffle_rng=_make_stream(shuffle_ss),
        walk_rng=_make_stream(walk_ss),
    )


def optimizer_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    moments: AdamMoments,
    step_count: int,
    learning_rate: float,
) -> tuple[dict[str, Tensor], AdamMoments]:
    """One Adam descent step; step_count is 1-based for bias correction."""
    bc1 = 1.0 - ADAM_BETA1**step_count
    bc2 = 1.0 - ADAM_BETA2**step_count
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != param {p.data.shape} ({name})")
        moments.m[name] = ADAM_BETA1 * moments.m[name] + (1.0 - ADAM_BETA1) * g
        moments.v[name] = ADAM_BETA2 * moments.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = moments.m[name] / bc1
        v_hat = moments.v[name] / bc2
        p.data = p.data - learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params, moments


def train_epoch(state: TrainState, observations: np.ndarray, config: TrainConfig) -> EpochReport:
    """One pass over the data in shuffled order; mutates state in place."""
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 1:
        raise ValueError("observations must be a nonempty (N, n) matrix")
    n_samples = obs.shape[0]
    capacity = capacity_schedule(state.epoch, config)
    perm = state.shuffle_rng.permutation(n_samples)
    sum_obj = sum_kl = sum_rec = 0.0
    for batch_index, start in enumerate(range(0, n_samples, config.batch_size)):
        idx = perm[start : start + config.batch_size]
        xb = obs[idx]
        eps = state.walk_rng.standard_normal((config.walk_length, len(idx), config.d + 1))
        try:
            out = state.model.elbo_graph(
                state.params,
                xb,
                beta=config.beta,
                capacity=capacity,
                walk_length=config.walk_length,
                step_mode=config.step_mode,
                eps=eps,
            )
            zero_grads(state.params)
            out["objective"].backward()
        except NonFiniteValue as exc:
            raise NonFiniteValue(
                f"divergence at epoch {state.epoch} batch {batch_index}: {exc}"
            ) from None
        # descend on the negated objective (maximization)
        grads = {}
        for name, p in state.params.items():
            g = -p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteValue(
                    f"divergence at epoch {state.epoch} batch {batch_index}: gradient {name}"
                )
            grads[name] = g
        state.step_count += 1
        optimizer_step(state.params, grads, state.moments, state.step_count, config.learning_rate)
        sum_obj += float(out["objective"].data) * len(idx)
        sum_kl += float(np.sum(out["kl"].data))
        sum_rec += float(np.sum(out["recon"].data))
    report = EpochReport(
        epoch=state.epoch,
        objective=sum_obj / n_samples,
        kl=sum_kl / n_samples,
        reconstruction=sum_rec / n_samples,
        capacity=capacity,
    )
    state.history.append(report)
    state.epoch += 1
    return report


def _rng_state_to_jsonable(gen: np.random.Generator):
    def enc(obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, np.integer):
            return int(obj)
        raise TypeError(f"cannot serialize {type(obj)}")

    return json.loads(json.dumps(gen.bit_generator.state, default=enc))


def _rng_from_jsonable(state) -> np.random.Generator:
    gen = np.random.Generator(np.random.Philox())
    gen.bit_generator.state = state
    return gen


def save_checkpoint(path, state: TrainState, config: TrainConfig, dataset_descriptor: dict) -> None:
    """Write manifest.json + weights.bin (params and Adam moments).

    Tensors go into weights.bin as little-endian float64 in manifest
    order; the round-trip is bit-exact.
    """
    os.makedirs(path, exist_ok=True)
    tensors: list[tuple[str, np.ndarray]] = []
    for name, p in state.params.items():
        tensors.append((name, p.data))
    for name in state.params:
        tensors.append((f"adam_m.{name}", state.moments.m[name]))
    for name in state.params:
        tensors.append((f"adam_v.{name}", state.moments.v[name]))
    index = []
    offset = 0
    blobs = []
    for name, arr in tensors:
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "config": config.to_dict(),
        "dataset": dataset_descriptor,
        "input_dim": state.model.input_dim,
        "epoch": state.epoch,
        "step_count": state.step_count,
        "rng": {
            "shuffle": _rng_state_to_jsonable(state.shuffle_rng),
            "walk": _rng_state_to_jsonable(state.walk_rng),
        },
        "history": [dataclasses.asdict(r) for r in state.history],
        "tensor_index": index,
    }
    with open(os.path.join(path, CHECKPOINT_WEIGHTS), "wb") as fh:
        for blob in blobs:
            fh.write(blob)
    with open(os.path.join(path, CHECKPOINT_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path) -> tuple[TrainState, TrainConfig, dict]:
    """Restore a checkpoint directory to a resumable TrainState."""
    with open(os.path.join(path, CHECKPOINT_MANIFEST), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    config = TrainConfig.from_dict(manifest["config"])
    with open(os.path.join(path, CHECKPOINT_WEIGHTS), "rb") as fh:
        raw = fh.read()
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["tensor_index"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
    model = DiffusionVAE(manifest["input_dim"], config.d, config.hidden)
    params: dict[str, Tensor] = {}
    for name in model.init_params(np.random.default_rng(0)):
        if name not in arrays:
            raise ConfigError(f"checkpoint missing tensor {name}")
        params[name] = Tensor(arrays[name], requires_grad=True)
    moments = AdamMoments(
        m={k: arrays[f"adam_m.{k}"] for k in params},
        v={k: arrays[f"adam_v.{k}"] for k in params},
    )
    state = TrainState(
        model=model,
        params=params,
        moments=moments,
        step_count=manifest["step_count"],
        epoch=manifest["epoch"],
        shuffle_rng=_rng_from_jsonable(manifest["rng"]["shuffle"]),
        walk_rng=_rng_from_jsonable(manifest["rng"]["walk"]),
        history=[EpochReport(**r) for r in manifest["history"]],
    )
    return state, config, manifest["dataset"]
