import dataclasses

import numpy as np
import pytest

from dvae.autodiff import Tensor
from dvae.data import make_ring
from dvae.errors import ConfigError
from dvae.training import (
    AdamMoments,
    TrainConfig,
    capacity_schedule,
    init_train_state,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
    train_epoch,
)


def small_config(**overrides):
    base = dict(
        d=2,
        beta=1.0,
        walk_length=3,
        c_min=0.5,
        c_max=2.0,
        epochs=6,
        anneal_epochs=4,
        batch_size=16,
        learning_rate=1e-3,
        seed=9,
        step_mode="brownian",
        hidden=(8,),
        checkpoint_every=2,
    )
    base.update(overrides)
    base["anneal_epochs"] = min(base["anneal_epochs"], base["epochs"])
    return TrainConfig(**base)


def test_config_defaults_match_hyperparameter_table():
    cfg = TrainConfig()
    assert cfg.d == 10
    assert cfg.beta == 1.0
    assert cfg.walk_length == 5
    assert cfg.c_min == 0.0
    assert cfg.c_max == 15.0


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig.from_dict({"d": 2, "bogus": 1})


@pytest.mark.parametrize(
    "overrides",
    [
        {"epochs": 0},
        {"d": 0},
        {"beta": 0.0},
        {"c_min": 3.0, "c_max": 1.0},
        {"anneal_epochs": 500},
        {"step_mode": "elliptic"},
        {"walk_length": 0},
    ],
)
def test_config_rejects_bad_values(overrides):
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({**TrainConfig().to_dict(), **overrides})


def test_capacity_schedule_endpoints_and_midpoint():
    cfg = TrainConfig()  # anneal over 300 epochs, 0 -> 15
    assert capacity_schedule(0, cfg) == 0.0
    assert capacity_schedule(cfg.anneal_epochs - 1, cfg) == 15.0
    assert capacity_schedule(cfg.epochs - 1, cfg) == 15.0
    odd = TrainConfig(epochs=301, anneal_epochs=301)
    assert capacity_schedule(150, odd) == pytest.approx(7.5)


def test_capacity_schedule_monotone_and_clamped():
    cfg = small_config(c_min=1.0, c_max=3.0, epochs=10, anneal_epochs=5)
    vals = [capacity_schedule(e, cfg) for e in range(10)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert vals[0] == 1.0 and vals[-1] == 3.0
    single = small_config(epochs=3, anneal_epochs=1, c_min=0.5, c_max=2.0)
    assert capacity_schedule(0, single) == 2.0


def test_adam_zero_gradient_decays_moments():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    mom = AdamMoments(m={"w": np.array([0.4, 0.4])}, v={"w": np.array([0.2, 0.2])})
    before = p["w"].data.copy()
    optimizer_step(p, {"w": np.zeros(2)}, mom, 1, 0.0)
    assert np.array_equal(p["w"].data, before)
    assert np.allclose(mom.m["w"], 0.9 * 0.4)
    assert np.allclose(mom.v["w"], 0.999 * 0.2)


def test_adam_first_step_is_bias_corrected():
    p = {"w": Tensor(np.array([0.0, 0.0]), requires_grad=True)}
    mom = AdamMoments(m={"w": np.zeros(2)}, v={"w": np.zeros(2)})
    g = np.array([0.3, -0.7])
    optimizer_step(p, {"w": g}, mom, 1, 0.01)
    # bias-corrected first step is ~ -lr * sign(g)
    expected = -0.01 * g / (np.abs(g) + 1e-8 / np.sqrt(1 - 0.999))
    assert np.allclose(p["w"].data, expected, rtol=1e-6)


def test_adam_quadratic_bowl_convergence():
    p = {"x": Tensor(np.array([3.0, -2.0, 1.5]), requires_grad=True)}
    mom = AdamMoments(m={"x": np.zeros(3)}, v={"x": np.zeros(3)})
    for step in range(1, 201):
        optimizer_step(p, {"x": p["x"].data.copy()}, mom, step, 0.1)
    assert np.linalg.norm(p["x"].data) < 1e-3


def test_zero_learning_rate_keeps_parameters_bit_exact():
    ds = make_ring(64, 8, 0.05, seed=1)
    cfg = small_config(learning_rate=0.0, epochs=2)
    state = init_train_state(cfg, ds.n_features)
    before = {k: p.data.copy() for k, p in state.params.items()}
    train_epoch(state, ds.observations, cfg)
    for k, p in state.params.items():
        assert np.array_equal(p.data, before[k])


def test_training_deterministic():
    ds = make_ring(64, 8, 0.05, seed=1)
    cfg = small_config()

    def run():
        state = init_train_state(cfg, ds.n_features)
        return [train_epoch(state, ds.observations, cfg) for _ in range(cfg.epochs)]

    r1, r2 = run(), run()
    assert r1 == r2  # bit-identical reports


def test_training_improves_objective():
    ds = make_ring(200, 16, 0.05, seed=2)
    cfg = small_config(epochs=30, anneal_epochs=20, c_min=1.0, c_max=3.0)
    state = init_train_state(cfg, ds.n_features)
    reports = [train_epoch(state, ds.observations, cfg) for _ in range(cfg.epochs)]
    assert reports[-1].objective > reports[0].objective


def test_checkpoint_round_trip_bit_exact(tmp_path):
    ds = make_ring(64, 8, 0.05, seed=1)
    cfg = small_config(epochs=3)
    state = init_train_state(cfg, ds.n_features)
    for _ in range(2):
        train_epoch(state, ds.observations, cfg)
    save_checkpoint(tmp_path / "ckpt", state, cfg, {"generator": "ring"})
    restored, cfg2, descriptor = load_checkpoint(tmp_path / "ckpt")
    assert cfg2 == cfg
    assert descriptor == {"generator": "ring"}
    assert restored.epoch == state.epoch
    assert restored.step_count == state.step_count
    assert restored.history == state.history
    for k, p in state.params.items():
        assert np.array_equal(restored.params[k].data, p.data)
        assert np.array_equal(restored.moments.m[k], state.moments.m[k])
        assert np.array_equal(restored.moments.v[k], state.moments.v[k])


def test_resume_matches_uninterrupted_run(tmp_path):
    ds = make_ring(64, 8, 0.05, seed=1)
    cfg = small_config(epochs=6)

    straight = init_train_state(cfg, ds.n_features)
    straight_reports = [train_epoch(straight, ds.observations, cfg) for _ in range(6)]

    state = init_train_state(cfg, ds.n_features)
    for _ in range(3):
        train_epoch(state, ds.observations, cfg)
    save_checkpoint(tmp_path / "mid", state, cfg, {"generator": "ring"})
    resumed, _, _ = load_checkpoint(tmp_path / "mid")
    resumed_reports = list(resumed.history)
    for _ in range(3):
        resumed_reports.append(train_epoch(resumed, ds.observations, cfg))

    assert resumed_reports == straight_reports
    for k, p in straight.params.items():
        assert np.array_equal(resumed.params[k].data, p.data)


def test_epoch_report_fields():
    ds = make_ring(32, 8, 0.05, seed=4)
    cfg = small_config(epochs=1)
    state = init_train_state(cfg, ds.n_features)
    report = train_epoch(state, ds.observations, cfg)
    assert report.epoch == 0
    assert report.capacity == capacity_schedule(0, cfg)
    assert dataclasses.asdict(report).keys() == {
        "epoch", "objective", "kl", "reconstruction", "capacity",
    }
