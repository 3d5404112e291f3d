"""Command-line entry point: train / eval / sample / traverse.

Exit codes: 0 ok, 1 I/O failure, 2 invalid configuration, 3 numerical
divergence. Every command that consumes randomness takes the seed from
the config or a --seed flag, so runs are bit-deterministic per platform.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import data as data_mod
from . import evaluation, training
from .errors import ConfigError, DvaeError, NonFiniteValue, ParseError
from .geometry import UnitVector, uniform_sample_rows
from .model import kl_divergence, sample_posterior_rows

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

METRICS_COLUMNS = ("epoch", "objective", "kl", "reconstruction", "C")


def _load_dataset(descriptor) -> data_mod.LabeledDataset:
    """Descriptor: {"path": csv} or {"generator": "ring"|"ring_plus_scale", ...}."""
    if not isinstance(descriptor, dict):
        raise ConfigError("dataset descriptor must be an object")
    if "path" in descriptor:
        extra = set(descriptor) - {"path"}
        if extra:
            raise ConfigError(f"unexpected dataset keys: {sorted(extra)}")
        return data_mod.load_csv(descriptor["path"])
    generators = {"ring": data_mod.make_ring, "ring_plus_scale": data_mod.make_ring_plus_scale}
    name = descriptor.get("generator")
    if name not in generators:
        raise ConfigError(f"dataset generator must be one of {sorted(generators)}")
    known = {"generator", "n_samples", "n_features", "noise_sigma", "seed"}
    extra = set(descriptor) - known
    if extra:
        raise ConfigError(f"unexpected dataset keys: {sorted(extra)}")
    try:
        return generators[name](
            N=int(descriptor.get("n_samples", 2000)),
            n=int(descriptor.get("n_features", 32)),
            noise_sigma=float(descriptor.get("noise_sigma", 0.05)),
            seed=int(descriptor.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad dataset descriptor: {exc}") from None


def _parse_dataset_arg(spec: str) -> dict:
    """--dataset accepts an inline JSON object or a CSV path."""
    spec = spec.strip()
    if spec.startswith("{"):
        try:
            return json.loads(spec)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad dataset JSON: {exc}") from None
    return {"path": spec}


def _write_metrics_csv(path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for r in history:
            fh.write(
                f"{r.epoch},{r.objective:.17g},{r.kl:.17g},"
                f"{r.reconstruction:.17g},{r.capacity:.17g}\n"
            )


def cmd_train(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    dataset_descriptor = raw.pop("dataset", {"generator": "ring"})
    config = training.TrainConfig.from_dict(raw)
    dataset = _load_dataset(dataset_descriptor)
    os.makedirs(args.out, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.monotonic()

    if args.resume:
        state, ckpt_config, ckpt_dataset = training.load_checkpoint(args.resume)
        if ckpt_config != config:
            raise ConfigError("config does not match the checkpoint being resumed")
        if ckpt_dataset != dataset_descriptor:
            raise ConfigError("dataset descriptor does not match the checkpoint")
    else:
        state = training.init_train_state(config, dataset.n_features)

    ckpt_dir = os.path.join(args.out, "checkpoint")
    for _ in range(state.epoch, config.epochs):
        report = training.train_epoch(state, dataset.observations, config)
        if state.epoch % config.checkpoint_every == 0 or state.epoch == config.epochs:
            training.save_checkpoint(ckpt_dir, state, config, dataset_descriptor)
            _write_metrics_csv(os.path.join(args.out, "metrics.csv"), state.history)
        print(
            f"epoch {report.epoch}: objective={report.objective:.4f} "
            f"kl={report.kl:.4f} recon={report.reconstruction:.4f} C={report.capacity:.4f}"
        )
    training.save_checkpoint(ckpt_dir, state, config, dataset_descriptor)
    metrics_path = os.path.join(args.out, "metrics.csv")
    _write_metrics_csv(metrics_path, state.history)
    manifest = {
        "config": config.to_dict(),
        "dataset": dataset_descriptor,
        "artifacts": {"checkpoint": ckpt_dir, "metrics_csv": metrics_path},
        "started": started,
        "wall_seconds": time.monotonic() - t0,
    }
    with open(os.path.join(args.out, "run_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    state, config, ckpt_dataset = training.load_checkpoint(args.checkpoint)
    descriptor = _parse_dataset_arg(args.dataset) if args.dataset else ckpt_dataset
    dataset = _load_dataset(descriptor)
    if dataset.n_features != state.model.input_dim:
        raise ConfigError(
            f"dataset has {dataset.n_features} features, model expects {state.model.input_dim}"
        )
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(args.seed)))
    mu, t = state.model.encode(state.params, dataset.observations)
    z = sample_posterior_rows(mu, t, config.walk_length, config.step_mode, rng)
    decoded = state.model.decode(state.params, z)
    resid = dataset.observations - decoded
    n = dataset.n_features
    recon = -0.5 * np.sum(resid * resid, axis=1) - 0.5 * n * np.log(2.0 * np.pi)
    kls = np.array([kl_divergence(float(ti), config.d) for ti in t])
    per_factor = {}
    score = None
    for name, kind, col in zip(
        dataset.factor_names, dataset.factor_kinds, dataset.factors.T
    ):
        if kind != "periodic":
            continue
        s = evaluation.recover_periodic_factor(mu, col)
        per_factor[name] = s.circular_correlation
        if score is None:
            score = s
    result = {
        "reconstruction_loglik_mean": float(np.mean(recon)),
        "kl_mean": float(np.mean(kls)),
        "circular_correlation": None if score is None else score.circular_correlation,
        "explained_variance_top2": None if score is None else score.explained_variance_top2,
        "per_factor": per_factor,
    }
    print(json.dumps(result))
    return EXIT_OK


def cmd_sample(args) -> int:
    state, config, ckpt_dataset = training.load_checkpoint(args.checkpoint)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(args.seed)))
    count = args.count
    if count < 1:
        raise ConfigError("--count must be >= 1")
    source = args.source
    if source == "prior":
        z = uniform_sample_rows(config.d, count, rng)
    elif source.startswith("posterior:"):
        try:
            index = int(source.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad --from value {source!r}") from None
        dataset = _load_dataset(ckpt_dataset)
        if not 0 <= index < dataset.n_samples:
            raise ConfigError(f"posterior index {index} out of range")
        x = dataset.observations[index : index + 1]
        mu, t = state.model.encode(state.params, x)
        mu = np.repeat(mu, count, axis=0)
        t = np.repeat(t, count)
        z = sample_posterior_rows(mu, t, config.walk_length, config.step_mode, rng)
    else:
        raise ConfigError("--from must be 'prior' or 'posterior:INDEX'")
    decoded = state.model.decode(state.params, z)
    header = [f"z{j}" for j in range(z.shape[1])] + [f"x{j}" for j in range(decoded.shape[1])]
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for zi, xi in zip(z, decoded):
            fh.write(",".join(format(v, ".17g") for v in list(zi) + list(xi)) + "\n")
    return EXIT_OK


def cmd_traverse(args) -> int:
    state, config, _ = training.load_checkpoint(args.checkpoint)
    m = config.d + 1
    if args.center:
        center_raw = np.asarray([float(v) for v in args.center.split(",")])
    else:
        center_raw = np.zeros(m)
        center_raw[0] = 1.0
    if center_raw.size != m:
        raise ConfigError(f"--center needs {m} comma-separated values")
    if args.direction:
        direction = np.asarray([float(v) for v in args.direction.split(",")])
    else:
        direction = np.zeros(m)
        direction[1] = 1.0
    if direction.size != m:
        raise ConfigError(f"--direction needs {m} comma-separated values")
    norm = np.linalg.norm(center_raw)
    if norm <= 1e-9:
        raise ConfigError("--center must be nonzero")
    center = UnitVector(center_raw / norm)
    evaluation.traverse(
        lambda zz: state.model.decode(state.params, zz),
        center,
        direction,
        args.steps,
        csv_path=args.out,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvae", description="Hyperspherical diffusion VAE trainer and tools"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None, help="CSV path or inline JSON descriptor")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw latents and decode them")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--from", dest="source", required=True, help="prior or posterior:INDEX")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("traverse", help="decode a great-circle latent sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--center", default=None, help="comma-separated ambient coordinates")
    p.add_argument("--direction", default=None, help="comma-separated ambient coordinates")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_traverse)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteValue as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, DvaeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
