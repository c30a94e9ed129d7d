"""Release gate: one test per shipping criterion, one PASS/FAIL line each.

The heavy fixtures (ten full training runs plus fifteen balance-weight
sweeps on the standard synthetic world) are module-scoped, so the whole
gate costs roughly two minutes. Run with -s to see the verdict lines on
passing runs; pytest -v already gives one PASSED/FAILED line per
criterion either way.
"""

from __future__ import annotations

import csv
import json
import os
import time
from collections import Counter
from itertools import product
from math import comb, log

import numpy as np
import pytest

from proxyclust.bundle import read_u32
from proxyclust.cli import main
from proxyclust.clusterloss import phase2_gradients, sample_pairs, total_loss
from proxyclust.metrics import kmeans, nmi, rand_index
from proxyclust.proxy import phase1_gradients

SEEDS = (0, 1, 2, 3, 4)
CONCEPTS = ("color", "species")
N = 600
# one point of the declared learning-rate grid; the gate pins it so the
# verdicts are reproducible run to run
ACC_FLAGS = ("--lr", "5e-3")

# per-run ceilings
RUN_WALL_LIMIT_S = 60.0
GRAD_WALL_LIMIT_S = 10.0

# verdict thresholds
OWN_NMI_MIN = 0.90
OTHER_NMI_MAX = 0.30
ZS_MARGIN = 0.02
LAMBDA_SLACK = 0.02
ORACLE_TOL = 1e-12
KMEANS_HITS_MIN = 98


def _verdict(tag: str, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'} {tag}: {detail}"
    print(line)
    return line


# ---------------------------------------------------------------- fixtures


def _synth(out: str, seed: int, basis: str) -> None:
    rc = main([
        "synth", "--out", out,
        "--n", str(N), "--dim", "32",
        "--concepts", "color:3,species:3",
        "--noise", "0.1", "--perturb-deg", "15",
        "--seed", str(seed), "--basis-concept", basis,
    ])
    assert rc == 0, f"synth failed for seed {seed} basis {basis}"


@pytest.fixture(scope="module")
def worlds(tmp_path_factory):
    """Bundle directory per (seed, basis concept)."""
    root = tmp_path_factory.mktemp("worlds")
    dirs = {}
    for seed in SEEDS:
        for concept in CONCEPTS:
            out = str(root / f"s{seed}_{concept}")
            _synth(out, seed, concept)
            dirs[(seed, concept)] = out
    return dirs


@pytest.fixture(scope="module")
def training_runs(worlds, tmp_path_factory):
    """Full training run + zero-shot baseline per (seed, basis concept).

    Records the pseudo-label NMI against both ground-truth partitions,
    the zero-shot NMI against the basis concept, and the wall time.
    """
    root = tmp_path_factory.mktemp("runs")
    results = {}
    for (seed, concept), bdir in worlds.items():
        rdir = str(root / f"run_s{seed}_{concept}")
        t0 = time.perf_counter()
        rc = main([
            "run", "--bundle", bdir, "--out", rdir,
            "--clustering", concept, "--seed", str(seed), *ACC_FLAGS,
        ])
        wall = time.perf_counter() - t0
        assert rc == 0, f"run failed for seed {seed} basis {concept}"

        labels = read_u32(os.path.join(rdir, "labels.u32"), N)
        truth = {
            c: read_u32(os.path.join(bdir, f"labels_{c}.u32"), N)
            for c in CONCEPTS
        }
        other = CONCEPTS[1 - CONCEPTS.index(concept)]

        zdir = str(root / f"zs_s{seed}_{concept}")
        rc = main(["zeroshot", "--bundle", bdir, "--clustering", concept,
                   "--out", zdir])
        assert rc == 0
        with open(os.path.join(zdir, "zeroshot.json"), encoding="utf-8") as fh:
            zs = json.load(fh)["nmi"]

        results[(seed, concept)] = {
            "own": nmi(labels, truth[concept]),
            "other": nmi(labels, truth[other]),
            "zeroshot": zs,
            "wall": wall,
            "bundle": bdir,
        }
    return results


@pytest.fixture(scope="module")
def lambda_sweeps(worlds, tmp_path_factory):
    """Balance-weight sweep rows per seed on the color-basis worlds."""
    root = tmp_path_factory.mktemp("sweeps")
    by_seed = {}
    for seed in SEEDS:
        out = str(root / f"sweep_s{seed}")
        rc = main([
            "sweep-lambda", "--bundle", worlds[(seed, "color")],
            "--out", out, "--clustering", "color",
            "--grid", "0,0.5,1", "--seed", str(seed), *ACC_FLAGS,
        ])
        assert rc == 0, f"sweep failed for seed {seed}"
        with open(os.path.join(out, "sweep.csv"), encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert all(r["error"] == "" for r in rows)
        by_seed[seed] = {float(r["lambda"]): float(r["nmi"]) for r in rows}
    return by_seed


# --------------------------------------------------- independent oracles


def _nmi_oracle(a, b) -> float:
    n = len(a)
    ca, cb = Counter(a), Counter(b)
    cj = Counter(zip(a, b))
    mi = sum(
        (m / n) * log((m * n) / (ca[x] * cb[y]))
        for (x, y), m in cj.items()
    )
    ha = -sum((m / n) * log(m / n) for m in ca.values())
    hb = -sum((m / n) * log(m / n) for m in cb.values())
    denom = (ha + hb) / 2.0
    if denom == 0.0:
        return 1.0
    return mi / denom


def _ri_oracle(a, b) -> float:
    n = len(a)
    agree = sum(
        (a[i] == a[j]) == (b[i] == b[j])
        for i in range(n) for j in range(i + 1, n)
    )
    return agree / comb(n, 2)


def _exhaustive_inertia(X: np.ndarray, k: int) -> float:
    best = np.inf
    n = X.shape[0]
    for assign in product(range(k), repeat=n):
        lab = np.asarray(assign)
        cost = 0.0
        for c in range(k):
            pts = X[lab == c]
            if pts.shape[0]:
                mu = pts.mean(axis=0)
                cost += float(((pts - mu) ** 2).sum())
        if cost < best:
            best = cost
    return best


def _p1_loss(P, W, U, Z, M) -> float:
    logits = P @ Z.T
    logits = logits - logits.max(axis=1, keepdims=True)
    E = np.exp(logits)
    A = E / E.sum(axis=1, keepdims=True)
    G = A @ M
    T = G / np.linalg.norm(G, axis=1, keepdims=True)
    Y = U @ W.T
    X = Y / np.linalg.norm(Y, axis=1, keepdims=True)
    return float(np.mean(-np.einsum("ij,ij->i", X, T)))


def _p2_loss(W, U, proxy, batch, margin, lam) -> float:
    Y = U @ W.T
    X = Y / np.linalg.norm(Y, axis=1, keepdims=True)
    pn = proxy / np.linalg.norm(proxy, axis=1, keepdims=True)
    V = np.concatenate([pn, X], axis=1)
    if batch.n_intra:
        d = V[batch.intra_i] - V[batch.intra_j]
        intra = float(np.mean(np.einsum("ij,ij->i", d, d)))
    else:
        intra = 0.0
    if batch.n_inter:
        d = V[batch.inter_i] - V[batch.inter_j]
        dist = np.sqrt(np.einsum("ij,ij->i", d, d))
        inter = float(np.mean(np.maximum(0.0, margin - dist)))
    else:
        inter = 0.0
    return lam * intra + (1.0 - lam) * inter


def _fd_ok(analytic: np.ndarray, f, X: np.ndarray, h: float = 1e-5) -> bool:
    # |analytic - central difference| <= 1e-4 * |fd| + 1e-7 per coordinate
    it = np.nditer(X, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        keep = X[ix]
        X[ix] = keep + h
        up = f()
        X[ix] = keep - h
        dn = f()
        X[ix] = keep
        fd = (up - dn) / (2.0 * h)
        if abs(analytic[ix] - fd) > 1e-4 * abs(fd) + 1e-7:
            return False
        it.iternext()
    return True


# ----------------------------------------------------------------- gates


def test_a1_basis_selects_its_concept(training_runs):
    detail = []
    ok = True
    for concept in CONCEPTS:
        own = float(np.mean([training_runs[(s, concept)]["own"] for s in SEEDS]))
        other = float(np.mean([training_runs[(s, concept)]["other"] for s in SEEDS]))
        ok = ok and own >= OWN_NMI_MIN and other <= OTHER_NMI_MAX
        detail.append(f"{concept}: own {own:.4f} (>= {OWN_NMI_MIN}), "
                      f"other {other:.4f} (<= {OTHER_NMI_MAX})")
    walls = [r["wall"] for r in training_runs.values()]
    ok = ok and max(walls) <= RUN_WALL_LIMIT_S
    detail.append(f"max wall {max(walls):.1f}s (<= {RUN_WALL_LIMIT_S:.0f}s)")
    line = _verdict("selectivity", ok, "; ".join(detail))
    assert ok, line


def test_a2_training_beats_zero_shot(training_runs):
    detail = []
    ok = True
    for concept in CONCEPTS:
        wins = sum(
            training_runs[(s, concept)]["own"]
            >= training_runs[(s, concept)]["zeroshot"] + ZS_MARGIN
            for s in SEEDS
        )
        ok = ok and wins >= 4
        detail.append(f"{concept}: {wins}/5 seeds (need >= 4)")
    line = _verdict("trained vs zero-shot", ok, "; ".join(detail))
    assert ok, line


def test_a3_analytic_gradients_match_finite_differences():
    t0 = time.perf_counter()
    ok = True

    for seed in range(50):
        rng = np.random.default_rng([seed, 0x67726164])
        n = int(rng.integers(3, 7))
        k = int(rng.integers(2, 5))
        d_tok = int(rng.integers(2, 6))
        d_joint = int(rng.integers(2, 6))
        d_raw = int(rng.integers(2, 6))
        P = rng.normal(size=(n, d_tok))
        Z = rng.normal(size=(k, d_tok))
        M = rng.normal(size=(k, d_joint))
        M /= np.linalg.norm(M, axis=1, keepdims=True)
        U = rng.normal(size=(n, d_raw))
        W = rng.normal(size=(d_joint, d_raw))
        gP, gW, _ = phase1_gradients(P, W, U, Z, M)
        ok = ok and _fd_ok(gP, lambda: _p1_loss(P, W, U, Z, M), P)
        ok = ok and _fd_ok(gW, lambda: _p1_loss(P, W, U, Z, M), W)
        if not ok:
            break

    margin = 0.9371
    done = 0
    attempt = 0
    while ok and done < 50:
        rng = np.random.default_rng([attempt, 0x68696E67])
        attempt += 1
        n = int(rng.integers(4, 9))
        d_joint = int(rng.integers(2, 5))
        d_raw = int(rng.integers(2, 5))
        labels = rng.integers(0, int(rng.integers(2, 4)), size=n)
        proxy = rng.normal(size=(n, 3))
        U = rng.normal(size=(n, d_raw))
        W = rng.normal(size=(d_joint, d_raw))
        batch = sample_pairs(labels, None, attempt)
        if batch.n_inter == 0:
            continue
        Y = U @ W.T
        X = Y / np.linalg.norm(Y, axis=1, keepdims=True)
        pn = proxy / np.linalg.norm(proxy, axis=1, keepdims=True)
        V = np.concatenate([pn, X], axis=1)
        diff = V[batch.inter_i] - V[batch.inter_j]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        # stay off the hinge kink and off coincident pairs, where the
        # one-sided derivative makes central differences meaningless
        if np.min(np.abs(dist - margin)) < 1e-3 or np.min(dist) < 1e-3:
            continue
        lam = float(rng.uniform(0.1, 0.9))
        gW, _ = phase2_gradients(W, U, proxy, batch, margin, lam)
        ok = ok and _fd_ok(
            gW, lambda: _p2_loss(W, U, proxy, batch, margin, lam), W
        )
        done += 1

    wall = time.perf_counter() - t0
    ok = ok and wall <= GRAD_WALL_LIMIT_S
    line = _verdict(
        "gradient check",
        ok,
        f"50 alignment + 50 clustering instances, "
        f"wall {wall:.1f}s (<= {GRAD_WALL_LIMIT_S:.0f}s)",
    )
    assert ok, line


def test_a4_agreement_metrics_match_oracles():
    rng = np.random.default_rng(0x6F7261)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 13))
        a = rng.integers(0, int(rng.integers(1, 5)), size=n).tolist()
        b = rng.integers(0, int(rng.integers(1, 5)), size=n).tolist()
        oracle = min(max(_nmi_oracle(a, b), 0.0), 1.0)
        worst = max(worst, abs(nmi(a, b) - oracle))
        worst = max(worst, abs(rand_index(a, b) - _ri_oracle(a, b)))
    exact = (
        nmi([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0
        and rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == 1.0 / 3.0
    )
    ok = worst <= ORACLE_TOL and exact
    line = _verdict(
        "metric oracles",
        ok,
        f"200 paired partitions, max |delta| {worst:.2e} (<= 1e-12); "
        f"crossed pair exact: {exact}",
    )
    assert ok, line


def test_a5_kmeans_restarts_reach_global_optimum():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 9))
        k = int(rng.integers(2, 4))
        X = rng.normal(size=(n, 2))
        got = kmeans(X, k, restarts=10, seed=seed).inertia
        opt = _exhaustive_inertia(X, k)
        if got <= opt + 1e-9:
            hits += 1
    ok = hits >= KMEANS_HITS_MIN
    line = _verdict(
        "kmeans optimality",
        ok,
        f"{hits}/100 instances at the exhaustive optimum (need >= {KMEANS_HITS_MIN})",
    )
    assert ok, line


def test_a6_balanced_lambda_not_worse_than_endpoints(lambda_sweeps):
    wins = 0
    per_seed = []
    for seed in SEEDS:
        row = lambda_sweeps[seed]
        mid, lo, hi = row[0.5], row[0.0], row[1.0]
        good = mid >= max(lo, hi) - LAMBDA_SLACK
        wins += good
        per_seed.append(f"s{seed} mid {mid:.3f} vs max({lo:.3f},{hi:.3f})")
    ok = wins >= 4
    line = _verdict(
        "balance weight", ok,
        f"{wins}/5 seeds within {LAMBDA_SLACK} of the better endpoint; "
        + "; ".join(per_seed),
    )
    assert ok, line


def test_a7_identical_runs_identical_bytes(worlds, tmp_path_factory):
    root = tmp_path_factory.mktemp("repeat")
    bdir = worlds[(0, "color")]
    outs = []
    for tag in ("first", "second"):
        out = str(root / tag)
        rc = main(["run", "--bundle", bdir, "--out", out,
                   "--clustering", "color", "--seed", "0", *ACC_FLAGS])
        assert rc == 0
        outs.append(out)

    same = True
    for name in ("report.json", "labels.u32"):
        with open(os.path.join(outs[0], name), "rb") as fh:
            first = fh.read()
        with open(os.path.join(outs[1], name), "rb") as fh:
            second = fh.read()
        same = same and first == second
    line = _verdict(
        "determinism", same,
        "report.json and labels.u32 byte-identical across repeated runs",
    )
    assert same, line


def test_a8_loss_blend_is_exact_convex_combination():
    rng = np.random.default_rng(0x626C6E64)
    ok = True
    for _ in range(1000):
        a = float(rng.uniform(0.0, 10.0))
        b = float(rng.uniform(0.0, 10.0))
        lam = float(rng.uniform(0.0, 1.0))
        if total_loss(a, b, lam) != lam * a + (1.0 - lam) * b:
            ok = False
            break
    line = _verdict(
        "loss blend identity", ok,
        "1000 random triples reproduce lam*intra + (1-lam)*inter bitwise",
    )
    assert ok, line
