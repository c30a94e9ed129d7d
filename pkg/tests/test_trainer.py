"""Adam updates, the alternating schedule, and hyperparameter search."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from proxyclust.bundle import Bundle, Manifest
from proxyclust.errors import ConfigError
from proxyclust.trainer import (
    LR_GRID,
    WD_GRID,
    AdamState,
    TrainConfig,
    TrainState,
    _TrainData,
    adam_step,
    alternate,
    grid_search,
    run_phase1,
    run_phase2,
)


def _toy_bundle(n=12, d=4, k=3, seed=0, noise=0.05):
    """In-memory bundle: k orthogonal class directions plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    axes = np.eye(d, dtype=np.float64)[:k]
    truth = np.arange(n) % k
    U = axes[truth] + noise * rng.normal(size=(n, d))
    man = Manifest(
        n=n,
        d_raw=d,
        d_joint=d,
        d_token=d,
        k=k,
        concept="toy",
        prompt_template="a thing that is *",
        reference_words=[f"w{i}" for i in range(k)],
        matrices={},
    )
    return Bundle(
        path="",
        manifest=man,
        raw=U.astype(np.float32),
        token_basis=axes.astype(np.float32),
        prompt_basis=axes.astype(np.float32),
        word_basis=None,
        projection_init=np.eye(d, dtype=np.float32)[:, :d],
        labels={"toy": truth.astype(np.uint32)},
        class_prompts={},
    )


def _fast_config(**kw):
    base = dict(
        phase1_epochs=2, phase2_epochs=1, total_epochs=3, convergence_tol=0.0
    )
    base.update(kw)
    return TrainConfig(**base)


# ---------------------------------------------------------------- adam


def test_adam_single_scalar_step():
    p = np.array([0.0])
    g = np.array([1.0])
    out, state = adam_step(p, g, AdamState.zeros_like(p), lr=0.1)
    # mhat = 1, vhat = 1 after bias correction, so delta = -0.1 / (1 + 1e-8)
    assert abs(out[0] - (-0.1 / (1.0 + 1e-8))) < 1e-6
    assert state.step == 1


def test_adam_zero_gradient_is_identity():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(3, 4))
    out, _ = adam_step(p, np.zeros_like(p), AdamState.zeros_like(p), lr=0.1)
    assert np.array_equal(out, p)


def test_adam_weight_decay_is_decoupled():
    p = np.full((2, 2), 3.0)
    out, _ = adam_step(
        p, np.zeros_like(p), AdamState.zeros_like(p), lr=0.1, weight_decay=0.01
    )
    assert np.array_equal(out, p * (1.0 - 0.1 * 0.01))


def test_adam_repeat_runs_bitwise_identical():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(4, 3))
    g = rng.normal(size=(4, 3))
    o1, s1 = adam_step(p.copy(), g, AdamState.zeros_like(p), lr=0.01)
    o2, s2 = adam_step(p.copy(), g, AdamState.zeros_like(p), lr=0.01)
    assert np.array_equal(o1, o2)
    assert np.array_equal(s1.m, s2.m)
    assert np.array_equal(s1.v, s2.v)


# ---------------------------------------------------------------- phases


def _stationary_instance():
    # saturated one-hot mixtures whose text targets equal the vision rows;
    # both gradients vanish exactly (softmax tail underflows to 0)
    K = 3
    eye = np.eye(K)
    data = _TrainData(
        U=eye, Z=50.0 * eye, align=eye, clusterb=50.0 * eye,
        W0=None, n=K, d_raw=K, d_joint=K, d_token=K,
    )
    state = TrainState(
        P=50.0 * eye,
        W=eye.copy(),
        adam_p=AdamState.zeros_like(eye),
        adam_w=AdamState.zeros_like(eye),
    )
    return data, state


def test_phase1_stationary_state_only_advances_counters():
    data, state = _stationary_instance()
    P0, W0 = state.P.copy(), state.W.copy()
    run_phase1(state, data, TrainConfig(), 3)
    assert np.array_equal(state.P, P0)
    assert np.array_equal(state.W, W0)
    assert state.adam_p.step == 3 and state.adam_w.step == 3
    assert [p for p, _ in state.trace] == ["phase1"] * 3


def test_phase2_single_cluster_flags_missing_inter_pairs():
    data, state = _stationary_instance()
    state.P = np.zeros_like(state.P)  # uniform mixtures, all ties -> label 0
    run_phase2(state, data, TrainConfig(), 2, round_index=1)
    assert "empty inter pair set" in state.warnings
    assert state.adam_w.step == 2


def test_phase2_reduces_intra_spread():
    rng = np.random.default_rng(3)
    n, d = 16, 4
    axes = np.eye(d)[:2]
    truth = np.arange(n) % 2
    U = 2.0 * axes[truth] + 0.8 * rng.normal(size=(n, d))
    data = _TrainData(
        U=U, Z=50.0 * axes, align=axes, clusterb=50.0 * axes,
        W0=None, n=n, d_raw=d, d_joint=d, d_token=d,
    )
    state = TrainState(
        P=0.2 * axes[truth],
        W=np.eye(d) + 0.1 * rng.normal(size=(d, d)),
        adam_p=AdamState.zeros_like(np.zeros((n, d))),
        adam_w=AdamState.zeros_like(np.zeros((d, d))),
    )
    config = TrainConfig(lr=0.05, lam=1.0)  # intra term only
    run_phase2(state, data, config, 10, round_index=1)
    losses = [l for p, l in state.trace if p == "phase2"]
    assert losses[-1] < losses[0]


# ---------------------------------------------------------------- schedule


def test_default_schedule_is_ten_truncated_rounds():
    report = alternate(_toy_bundle(), TrainConfig(convergence_tol=0.0))
    assert len(report.epochs) == 1000
    assert report.outer_rounds == 10
    assert report.stop_reason == "epoch_budget"
    # nine full rounds of 100+10, then a 10-epoch truncated alignment block
    tags = [p for p, _ in report.epochs]
    for r in range(9):
        base = 110 * r
        assert tags[base : base + 100] == ["phase1"] * 100
        assert tags[base + 100 : base + 110] == ["phase2"] * 10
    assert tags[990:] == ["phase1"] * 10


def test_infinite_tolerance_stops_after_one_round():
    report = alternate(_toy_bundle(), TrainConfig(convergence_tol=float("inf")))
    assert report.outer_rounds == 1
    assert report.stop_reason == "tolerance"
    assert len(report.epochs) == 110


def test_epoch_budget_truncation_cases():
    for total, p1, p2 in ((105, 100, 10), (50, 100, 10), (101, 100, 10)):
        config = TrainConfig(
            phase1_epochs=p1, phase2_epochs=p2, total_epochs=total,
            convergence_tol=0.0,
        )
        report = alternate(_toy_bundle(), config)
        assert len(report.epochs) == total
        assert len(report.epochs) <= total + p1 + p2 - 1


def test_alignment_loss_descends_on_separable_data():
    report = alternate(
        _toy_bundle(), TrainConfig(total_epochs=110, convergence_tol=0.0)
    )
    p1 = [l for p, l in report.epochs if p == "phase1"]
    assert p1[-1] <= p1[0]


def test_same_seed_reports_are_identical():
    bundle = _toy_bundle()
    r1 = alternate(bundle, TrainConfig(total_epochs=220, convergence_tol=0.0))
    r2 = alternate(bundle, TrainConfig(total_epochs=220, convergence_tol=0.0))
    assert np.array_equal(r1.latent_factors, r2.latent_factors)
    assert np.array_equal(r1.projection, r2.projection)
    assert np.array_equal(r1.pseudo_labels, r2.pseudo_labels)
    assert r1.epochs == r2.epochs
    assert r1.to_json_dict() == r2.to_json_dict()


def test_different_seed_changes_the_run():
    bundle = _toy_bundle()
    r1 = alternate(bundle, _fast_config(seed=0))
    r2 = alternate(bundle, _fast_config(seed=1))
    assert not np.array_equal(r1.latent_factors, r2.latent_factors)


def test_report_shape_and_echo():
    bundle = _toy_bundle()
    config = _fast_config(seed=7)
    report = alternate(bundle, config)
    assert report.config is config
    assert report.pseudo_labels.shape == (bundle.n,)
    assert sum(report.cluster_sizes) == bundle.n
    assert len(report.cluster_sizes) == bundle.k
    doc = report.to_json_dict()
    assert "wall_clock_s" not in doc
    assert doc["schedule"]["epochs_run"] == len(report.epochs)
    assert "wall_clock_s" in report.to_json_dict(include_timing=True)


# ---------------------------------------------------------------- config


def test_config_validation_rejects_bad_values():
    for kw in (
        {"lr": 0.0},
        {"weight_decay": -1e-4},
        {"lam": 1.5},
        {"margin": 0.0},
        {"phase1_epochs": 0},
        {"total_epochs": 0},
        {"phase2_epochs": -1},
        {"pair_budget": 0},
        {"subspace": "tokens"},
        {"features": "both"},
        {"seed": -1},
        {"convergence_tol": -1.0},
    ):
        with pytest.raises(ConfigError):
            TrainConfig(**kw).validate()
    TrainConfig().validate()  # defaults are valid


# ---------------------------------------------------------------- grid


def test_grid_covers_all_cells_and_picks_minimum():
    bundle = _toy_bundle(n=8, d=3, k=2)
    best, rows = grid_search(bundle, _fast_config())
    assert len(rows) == len(LR_GRID) * len(WD_GRID) == 30
    ok = [r for r in rows if not r["error"]]
    assert ok, "every cell failed"
    scores = {
        (r["lr"], r["weight_decay"]): r["final_total_loss"]
        if r["final_total_loss"] is not None
        else r["final_phase1_loss"]
        for r in ok
    }
    best_score = scores[(best.lr, best.weight_decay)]
    assert best_score == min(scores.values())
    # ties break toward smaller lr, then smaller weight decay
    tied = sorted(k for k, v in scores.items() if v == best_score)
    assert (best.lr, best.weight_decay) == tied[0]


def test_single_cell_grid_returns_that_cell():
    bundle = _toy_bundle(n=8, d=3, k=2)
    best, rows = grid_search(bundle, _fast_config(), lr_grid=(1e-2,), wd_grid=(0.0,))
    assert len(rows) == 1
    assert (best.lr, best.weight_decay) == (1e-2, 0.0)


def test_grid_selection_never_reads_ground_truth():
    bundle = _toy_bundle(n=8, d=3, k=2)
    stripped = replace(bundle, labels={})
    b1, rows1 = grid_search(bundle, _fast_config(), lr_grid=(1e-2, 1e-3), wd_grid=(0.0,))
    b2, rows2 = grid_search(stripped, _fast_config(), lr_grid=(1e-2, 1e-3), wd_grid=(0.0,))
    assert (b1.lr, b1.weight_decay) == (b2.lr, b2.weight_decay)
    assert rows1 == rows2
