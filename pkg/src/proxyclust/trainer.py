"""Alternating two-phase optimizer.

One outer round is [alignment phase x phase1_epochs, clustering phase x
phase2_epochs]. Rounds repeat until the cumulative epoch count reaches
total_epochs (the last round is truncated to fit) or the relative change of
the alignment loss between consecutive rounds drops below convergence_tol.

Phase one runs full-batch Adam on the latent factors and the vision
projection. Phase two freezes the text side: pseudo-labels and proxy rows
are computed once on entry, pairs are re-sampled every epoch, and only the
projection moves. Adam state persists across phases and rounds.

Everything is deterministic given the config seed: parameter init, pair
sampling, and therefore the whole loss trace and final state.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .bundle import Bundle, normalize_rows
from .clusterloss import assign_pseudo_labels, phase2_gradients, sample_pairs
from .errors import ConfigError
from .proxy import (
    alignment_basis,
    check_mode,
    cluster_basis,
    mixture_weights,
    phase1_gradients,
    proxy_embedding,
)

# full pair enumeration below this many samples; sampled above
FULL_ENUM_MAX_N = 512

# hyperparameter search grids
LR_GRID = (1e-1, 5e-2, 1e-2, 5e-3, 1e-3, 5e-4)
WD_GRID = (5e-4, 1e-4, 5e-5, 1e-5, 0.0)

FEATURE_MODES = ("text", "concat")

_TAG_INIT = 0x696E6974
_TAG_PAIRS = 0x70616972


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    phase1_epochs: int = 100
    phase2_epochs: int = 10
    total_epochs: int = 1000
    lam: float = 0.5
    margin: float = 1.0
    pair_budget: int = 4096
    subspace: str = "token"
    features: str = "concat"
    seed: int = 0
    convergence_tol: float = 1e-5

    def validate(self) -> "TrainConfig":
        if not self.lr > 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if not self.margin > 0.0:
            raise ConfigError(f"margin must be positive, got {self.margin}")
        for name in ("phase1_epochs", "total_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.phase2_epochs < 0:
            raise ConfigError("phase2_epochs must be >= 0")
        if self.pair_budget < 1:
            raise ConfigError(f"pair_budget must be >= 1, got {self.pair_budget}")
        check_mode(self.subspace)
        if self.features not in FEATURE_MODES:
            raise ConfigError(
                f"unknown feature mode {self.features!r}, expected one of {FEATURE_MODES}"
            )
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        if not self.convergence_tol >= 0.0:
            raise ConfigError(f"convergence_tol must be >= 0, got {self.convergence_tol}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), step=0)


def adam_step(
    param,
    grad,
    state: AdamState,
    *,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update with decoupled weight decay.

    Decay multiplies the parameter by (1 - lr * weight_decay) before the
    Adam delta -lr * mhat / (sqrt(vhat) + eps) is applied. Returns the new
    parameter and the advanced state.
    """
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * (grad * grad)
    mhat = state.m / (1.0 - beta1**state.step)
    vhat = state.v / (1.0 - beta2**state.step)
    out = param * (1.0 - lr * weight_decay)
    return out - lr * mhat / (np.sqrt(vhat) + eps), state


@dataclass
class _TrainData:
    U: np.ndarray
    Z: np.ndarray
    align: np.ndarray
    clusterb: np.ndarray
    W0: np.ndarray | None
    n: int
    d_raw: int
    d_joint: int
    d_token: int


def _prepare(bundle: Bundle, config: TrainConfig) -> _TrainData:
    man = bundle.manifest
    word = bundle.word_basis
    return _TrainData(
        U=np.asarray(bundle.raw, dtype=np.float64),
        Z=np.asarray(bundle.token_basis, dtype=np.float64),
        align=np.asarray(
            alignment_basis(config.subspace, bundle.prompt_basis, word), dtype=np.float64
        ),
        clusterb=np.asarray(
            cluster_basis(config.subspace, bundle.token_basis, bundle.prompt_basis, word),
            dtype=np.float64,
        ),
        W0=None
        if bundle.projection_init is None
        else np.asarray(bundle.projection_init, dtype=np.float64),
        n=man.n,
        d_raw=man.d_raw,
        d_joint=man.d_joint,
        d_token=man.d_token,
    )


@dataclass
class TrainState:
    P: np.ndarray
    W: np.ndarray
    adam_p: AdamState
    adam_w: AdamState
    epoch: int = 0
    trace: list = field(default_factory=list)  # (phase, loss) per epoch
    warnings: list = field(default_factory=list)


def init_state(data: _TrainData, config: TrainConfig) -> TrainState:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _TAG_INIT]))
    P = rng.normal(0.0, 0.01, size=(data.n, data.d_token))
    if data.W0 is not None:
        W = data.W0.copy()
    else:
        W = rng.normal(0.0, 1.0 / np.sqrt(data.d_raw), size=(data.d_joint, data.d_raw))
    return TrainState(
        P=P,
        W=W,
        adam_p=AdamState.zeros_like(P),
        adam_w=AdamState.zeros_like(W),
    )


def run_phase1(state: TrainState, data: _TrainData, config: TrainConfig, epochs: int):
    """Full-batch alignment epochs; returns (first, last) recorded loss."""
    first = last = None
    for _ in range(epochs):
        gradP, gradW, loss = phase1_gradients(state.P, state.W, data.U, data.Z, data.align)
        state.trace.append(("phase1", loss))
        state.P, _ = adam_step(
            state.P, gradP, state.adam_p,
            lr=config.lr, weight_decay=config.weight_decay,
            beta1=config.beta1, beta2=config.beta2, eps=config.eps,
        )
        state.W, _ = adam_step(
            state.W, gradW, state.adam_w,
            lr=config.lr, weight_decay=config.weight_decay,
            beta1=config.beta1, beta2=config.beta2, eps=config.eps,
        )
        state.epoch += 1
        if first is None:
            first = loss
        last = loss
    return first, last


def run_phase2(
    state: TrainState, data: _TrainData, config: TrainConfig, epochs: int, round_index: int
) -> None:
    """Clustering epochs against pseudo-labels fixed at phase entry."""
    A = mixture_weights(state.P, data.Z)
    proxy = proxy_embedding(A, data.clusterb, config.subspace)
    labels = assign_pseudo_labels(proxy, data.clusterb)
    H = normalize_rows(proxy)

    budget = None if data.n <= FULL_ENUM_MAX_N else config.pair_budget
    for e in range(epochs):
        seed = np.random.SeedSequence([config.seed, _TAG_PAIRS, round_index, e])
        batch = sample_pairs(labels, budget, seed)
        if batch.n_intra == 0 and "empty intra pair set" not in state.warnings:
            state.warnings.append("empty intra pair set")
        if batch.n_inter == 0 and "empty inter pair set" not in state.warnings:
            state.warnings.append("empty inter pair set")
        gradW, loss = phase2_gradients(state.W, data.U, H, batch, config.margin, config.lam)
        state.trace.append(("phase2", loss))
        state.W, _ = adam_step(
            state.W, gradW, state.adam_w,
            lr=config.lr, weight_decay=config.weight_decay,
            beta1=config.beta1, beta2=config.beta2, eps=config.eps,
        )
        state.epoch += 1


@dataclass
class TrainReport:
    config: TrainConfig
    epochs: list                    # (phase, loss) in execution order
    outer_rounds: int
    stop_reason: str                # "tolerance" | "epoch_budget"
    final_phase1_loss: float
    final_total_loss: float | None  # None when no clustering epochs ran
    latent_factors: np.ndarray
    projection: np.ndarray
    pseudo_labels: np.ndarray
    cluster_sizes: list
    warnings: list
    wall_clock_s: float

    def to_json_dict(self, include_timing: bool = False) -> dict:
        doc = {
            "config": self.config.to_dict(),
            "schedule": {
                "outer_rounds": self.outer_rounds,
                "epochs_run": len(self.epochs),
                "stop_reason": self.stop_reason,
            },
            "losses": {
                "final_phase1": self.final_phase1_loss,
                "final_total": self.final_total_loss,
            },
            "trace": [{"phase": p, "loss": l} for p, l in self.epochs],
            "cluster_sizes": self.cluster_sizes,
            "warnings": list(self.warnings),
        }
        if include_timing:
            doc["wall_clock_s"] = self.wall_clock_s
        return doc


def alternate(bundle: Bundle, config: TrainConfig) -> TrainReport:
    """Run the full alternating schedule on a loaded bundle."""
    config.validate()
    data = _prepare(bundle, config)
    state = init_state(data, config)

    t0 = time.perf_counter()
    rounds = 0
    prev_round_loss = None
    reason = "epoch_budget"
    while state.epoch < config.total_epochs:
        e1 = min(config.phase1_epochs, config.total_epochs - state.epoch)
        first, last = run_phase1(state, data, config, e1)
        rounds += 1
        if state.epoch < config.total_epochs and config.phase2_epochs > 0:
            e2 = min(config.phase2_epochs, config.total_epochs - state.epoch)
            run_phase2(state, data, config, e2, rounds)
        # round 1 is measured against its own starting loss, later rounds
        # against the previous round; tol=inf therefore stops after one round
        ref = prev_round_loss if prev_round_loss is not None else first
        rel = abs(last - ref) / max(abs(ref), 1e-30)
        prev_round_loss = last
        if rel < config.convergence_tol:
            reason = "tolerance"
            break
    wall = time.perf_counter() - t0

    A = mixture_weights(state.P, data.Z)
    proxy = proxy_embedding(A, data.clusterb, config.subspace)
    labels = assign_pseudo_labels(proxy, data.clusterb)
    sizes = np.bincount(labels, minlength=data.Z.shape[0]).tolist()

    phase1_losses = [l for p, l in state.trace if p == "phase1"]
    phase2_losses = [l for p, l in state.trace if p == "phase2"]
    return TrainReport(
        config=config,
        epochs=list(state.trace),
        outer_rounds=rounds,
        stop_reason=reason,
        final_phase1_loss=phase1_losses[-1],
        final_total_loss=phase2_losses[-1] if phase2_losses else None,
        latent_factors=state.P,
        projection=state.W,
        pseudo_labels=labels,
        cluster_sizes=sizes,
        warnings=list(state.warnings),
        wall_clock_s=wall,
    )


def grid_search(bundle: Bundle, config: TrainConfig, lr_grid=LR_GRID, wd_grid=WD_GRID):
    """Exhaustive (lr, weight_decay) search ranked by final loss.

    Selection never looks at ground truth: cells are ranked by the last
    recorded clustering total loss (final alignment loss when no clustering
    epochs ran), ties broken toward smaller lr, then smaller weight decay.
    Returns (best_config, rows) where rows record every cell including
    failures.
    """
    rows = []
    best_key = None
    best_config = None
    for lr in lr_grid:
        for wd in wd_grid:
            cell = replace(config, lr=lr, weight_decay=wd)
            row = {"lr": lr, "weight_decay": wd, "error": ""}
            try:
                report = alternate(bundle, cell)
            except Exception as exc:  # cell failures recorded, search goes on
                row["error"] = f"{type(exc).__name__}: {exc}"
                row["final_phase1_loss"] = None
                row["final_total_loss"] = None
                rows.append(row)
                continue
            row["final_phase1_loss"] = report.final_phase1_loss
            row["final_total_loss"] = report.final_total_loss
            row["stop_reason"] = report.stop_reason
            rows.append(row)
            score = (
                report.final_total_loss
                if report.final_total_loss is not None
                else report.final_phase1_loss
            )
            key = (score, lr, wd)
            if best_key is None or key < best_key:
                best_key = key
                best_config = cell
    if best_config is None:
        raise ConfigError("every grid cell failed")
    return best_config, rows
