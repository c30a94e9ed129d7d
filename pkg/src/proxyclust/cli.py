"""Command line interface.

Subcommands:
    run           train on a bundle; writes report.json, loss.csv, labels.u32
    eval          score one label file against another (NMI, Rand index)
    zeroshot      cosine argmax assignment from the initial projection
    ablate        subspace x features grid; writes ablation.csv
    sweep-lambda  balance-weight sweep; writes sweep.csv
    synth         generate a synthetic bundle with known ground truth
    grid          lr x weight-decay search ranked by final loss

Exit codes: 0 success, 2 usage or input validation, 3 runtime or numerical.
Diagnostics go to stderr as one JSON object per failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .bundle import Bundle, load_bundle, normalize_rows, read_u32, write_f32, write_u32
from .clusterloss import concat_features
from .errors import BundleError, ConfigError
from .metrics import KMEANS_RESTARTS, kmeans, mmd2_unbiased, nmi, rand_index, zero_shot_assign
from .proxy import (
    SUBSPACE_MODES,
    cluster_basis,
    mixture_weights,
    project_vision,
    proxy_embedding,
)
from .synth import DEFAULT_WITHIN_COS
from .trainer import (
    FEATURE_MODES,
    LR_GRID,
    WD_GRID,
    TrainConfig,
    TrainReport,
    alternate,
    grid_search,
)

_TAG_KMEANS = 0x6B6D6E73

DEFAULT_LAMBDA_GRID = tuple(round(0.1 * i, 1) for i in range(11))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in header])


def _print_json(doc: dict) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="clustering loss balance in [0, 1]")
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--phase1-epochs", type=int, default=None)
    p.add_argument("--phase2-epochs", type=int, default=None)
    p.add_argument("--total-epochs", type=int, default=None)
    p.add_argument("--pair-budget", type=int, default=None)
    p.add_argument("--subspace", choices=SUBSPACE_MODES, default=None)
    p.add_argument("--features", choices=FEATURE_MODES, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--convergence-tol", type=float, default=None)


_TRAIN_FIELDS = (
    "lam", "margin", "lr", "weight_decay", "phase1_epochs", "phase2_epochs",
    "total_epochs", "pair_budget", "subspace", "features", "seed", "convergence_tol",
)


def _config_from_args(args) -> TrainConfig:
    overrides = {
        name: getattr(args, name)
        for name in _TRAIN_FIELDS
        if getattr(args, name, None) is not None
    }
    return replace(TrainConfig(), **overrides).validate()


def _resolve_clustering(bundle: Bundle, args, required: bool = False) -> str | None:
    name = getattr(args, "clustering", None) or getattr(args, "concept", None)
    if name is None:
        if required:
            raise ConfigError("this command needs --clustering (a ground-truth name)")
        return None
    if name not in bundle.labels:
        raise ConfigError(
            f"clustering {name!r} not in bundle ground truth {sorted(bundle.labels)}"
        )
    return name


def _final_features(bundle: Bundle, config: TrainConfig, report: TrainReport) -> np.ndarray:
    """Features the evaluation clustering runs on, per the features mode."""
    basis = cluster_basis(
        config.subspace, bundle.token_basis, bundle.prompt_basis, bundle.word_basis
    )
    A = mixture_weights(report.latent_factors, np.asarray(bundle.token_basis, dtype=np.float64))
    proxy = proxy_embedding(A, np.asarray(basis, dtype=np.float64), config.subspace)
    if config.features == "text":
        return normalize_rows(proxy)
    X = project_vision(report.projection, np.asarray(bundle.raw, dtype=np.float64))
    return concat_features(proxy, X)


def _truth_metrics(bundle: Bundle, truth_name: str, report: TrainReport, config: TrainConfig) -> dict:
    truth = bundle.labels[truth_name]
    k = int(truth.max()) + 1
    feats = _final_features(bundle, config, report)
    km = kmeans(
        feats, k,
        restarts=KMEANS_RESTARTS,
        seed=np.random.SeedSequence([config.seed, _TAG_KMEANS]),
    )
    nmis = [nmi(lbl, truth) for lbl in km.restart_labels]
    ris = [rand_index(lbl, truth) for lbl in km.restart_labels]
    return {
        "pseudo": {
            "nmi": nmi(report.pseudo_labels, truth),
            "rand_index": rand_index(report.pseudo_labels, truth),
        },
        "kmeans": {
            "k": k,
            "restarts": KMEANS_RESTARTS,
            "nmi_mean": float(np.mean(nmis)),
            "rand_index_mean": float(np.mean(ris)),
            "nmi_best": nmi(km.labels, truth),
            "rand_index_best": rand_index(km.labels, truth),
        },
    }


def _write_report(out: str, doc: dict) -> None:
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(args) -> int:
    bundle = load_bundle(args.bundle)
    config = _config_from_args(args)
    truth_name = _resolve_clustering(bundle, args)

    report = alternate(bundle, config)
    metrics_block = (
        _truth_metrics(bundle, truth_name, report, config) if truth_name else {}
    )

    os.makedirs(args.out, exist_ok=True)
    doc = report.to_json_dict()
    man = bundle.manifest
    doc["bundle"] = {
        "path": args.bundle,
        "concept": man.concept,
        "n": man.n,
        "k": man.k,
        "d_raw": man.d_raw,
        "d_joint": man.d_joint,
        "d_token": man.d_token,
    }
    doc["clustering"] = truth_name
    doc["metrics"] = metrics_block
    doc["outputs"] = {
        "labels": "labels.u32",
        "loss_trace": "loss.csv",
        "latent_factors": "latent_factors.f32",
        "projection": "projection.f32",
    }
    _write_report(args.out, doc)
    _write_csv(
        os.path.join(args.out, "loss.csv"),
        ["epoch", "phase", "loss"],
        [
            {"epoch": i, "phase": p, "loss": l}
            for i, (p, l) in enumerate(report.epochs)
        ],
    )
    write_u32(os.path.join(args.out, "labels.u32"), report.pseudo_labels)
    write_f32(os.path.join(args.out, "latent_factors.f32"), report.latent_factors)
    write_f32(os.path.join(args.out, "projection.f32"), report.projection)

    line = (
        f"run: {len(report.epochs)} epochs in {report.outer_rounds} rounds "
        f"({report.stop_reason}), final alignment loss {report.final_phase1_loss:.6f}, "
        f"wall {report.wall_clock_s:.2f}s"
    )
    if truth_name:
        line += f", pseudo NMI vs {truth_name} {metrics_block['pseudo']['nmi']:.4f}"
    print(line)
    return 0


def cmd_eval(args) -> int:
    for path in (args.pred, args.truth):
        if not os.path.isfile(path):
            raise BundleError("label file not found", path=path)
        if os.path.getsize(path) % 4 != 0:
            raise BundleError("label file length is not a multiple of 4", path=path)
    n_pred = os.path.getsize(args.pred) // 4
    n_truth = os.path.getsize(args.truth) // 4
    if n_pred != n_truth:
        raise ConfigError(f"label files disagree on n: {n_pred} vs {n_truth}")
    pred = read_u32(args.pred, n_pred)
    truth = read_u32(args.truth, n_truth)
    _print_json(
        {
            "n": n_pred,
            "nmi": nmi(pred, truth),
            "ri": rand_index(pred, truth),
            "clusters_pred": int(np.unique(pred).size),
            "clusters_truth": int(np.unique(truth).size),
        }
    )
    return 0


def cmd_zeroshot(args) -> int:
    bundle = load_bundle(args.bundle)
    truth_name = _resolve_clustering(bundle, args, required=args.prompts == "truth-label")
    if bundle.projection_init is None:
        raise ConfigError("zero-shot needs a projection_init matrix in the bundle")

    if args.prompts == "truth-label":
        prompts = bundle.class_prompts.get(truth_name)
        if prompts is None:
            raise ConfigError(f"bundle has no class_prompts for {truth_name!r}")
    else:
        prompts = bundle.prompt_basis

    X = project_vision(
        np.asarray(bundle.projection_init, dtype=np.float64),
        np.asarray(bundle.raw, dtype=np.float64),
    )
    labels = zero_shot_assign(X, np.asarray(prompts, dtype=np.float64))

    doc = {
        "prompts": args.prompts,
        "n": int(labels.shape[0]),
        "cluster_sizes": np.bincount(labels, minlength=prompts.shape[0]).tolist(),
    }
    if truth_name:
        truth = bundle.labels[truth_name]
        doc["clustering"] = truth_name
        doc["nmi"] = nmi(labels, truth)
        doc["rand_index"] = rand_index(labels, truth)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_u32(os.path.join(args.out, "zeroshot_labels.u32"), labels)
        with open(os.path.join(args.out, "zeroshot.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _print_json(doc)
    return 0


def _cells_csv(value: str, allowed: tuple, what: str) -> list:
    cells = [v.strip() for v in value.split(",") if v.strip()]
    if not cells:
        raise ConfigError(f"no {what} requested")
    for cell in cells:
        if cell not in allowed:
            raise ConfigError(f"unknown {what} {cell!r}, expected one of {allowed}")
    return cells


def cmd_ablate(args) -> int:
    bundle = load_bundle(args.bundle)
    config = _config_from_args(args)
    truth_name = _resolve_clustering(bundle, args, required=True)
    subspaces = _cells_csv(args.subspaces, SUBSPACE_MODES, "subspace")
    features = _cells_csv(args.feature_list, FEATURE_MODES, "feature mode")

    rows = []
    for sub in subspaces:
        for feat in features:
            cell = replace(config, subspace=sub, features=feat)
            row = {"subspace": sub, "features": feat, "error": ""}
            try:
                report = alternate(bundle, cell)
                block = _truth_metrics(bundle, truth_name, report, cell)
                row.update(
                    {
                        "kmeans_nmi": block["kmeans"]["nmi_mean"],
                        "kmeans_rand_index": block["kmeans"]["rand_index_mean"],
                        "pseudo_nmi": block["pseudo"]["nmi"],
                        "pseudo_rand_index": block["pseudo"]["rand_index"],
                        "final_loss": report.final_total_loss,
                    }
                )
            except (BundleError, ConfigError) as exc:
                raise
            except Exception as exc:  # keep the grid going, record the cell
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)

    os.makedirs(args.out, exist_ok=True)
    header = [
        "subspace", "features", "kmeans_nmi", "kmeans_rand_index",
        "pseudo_nmi", "pseudo_rand_index", "final_loss", "error",
    ]
    _write_csv(os.path.join(args.out, "ablation.csv"), header, rows)
    for row in rows:
        print(
            f"ablate {row['subspace']}/{row['features']}: "
            + (row["error"] or f"kmeans NMI {row['kmeans_nmi']:.4f}")
        )
    return 0


def cmd_sweep_lambda(args) -> int:
    bundle = load_bundle(args.bundle)
    config = _config_from_args(args)
    truth_name = _resolve_clustering(bundle, args, required=True)
    if args.grid:
        grid = []
        for tok in args.grid.split(","):
            tok = tok.strip()
            if tok:
                grid.append(float(tok))
        if not grid:
            raise ConfigError("empty lambda grid")
    else:
        grid = list(DEFAULT_LAMBDA_GRID)
    for lam in grid:
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"lambda grid value {lam} outside [0, 1]")

    rows = []
    for lam in grid:
        cell = replace(config, lam=lam)
        row = {"lambda": lam, "error": ""}
        try:
            report = alternate(bundle, cell)
            block = _truth_metrics(bundle, truth_name, report, cell)
            row.update(
                {
                    "nmi": block["pseudo"]["nmi"],
                    "rand_index": block["pseudo"]["rand_index"],
                    "kmeans_nmi": block["kmeans"]["nmi_mean"],
                    "kmeans_rand_index": block["kmeans"]["rand_index_mean"],
                    "final_loss": report.final_total_loss,
                }
            )
        except (BundleError, ConfigError):
            raise
        except Exception as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    os.makedirs(args.out, exist_ok=True)
    header = [
        "lambda", "nmi", "rand_index", "kmeans_nmi", "kmeans_rand_index",
        "final_loss", "error",
    ]
    _write_csv(os.path.join(args.out, "sweep.csv"), header, rows)
    for row in rows:
        print(
            f"lambda {row['lambda']}: "
            + (row["error"] or f"NMI {row['nmi']:.4f}")
        )
    return 0


def cmd_grid(args) -> int:
    bundle = load_bundle(args.bundle)
    config = _config_from_args(args)
    best, rows = grid_search(bundle, config, LR_GRID, WD_GRID)
    os.makedirs(args.out, exist_ok=True)
    header = ["lr", "weight_decay", "final_phase1_loss", "final_total_loss", "stop_reason", "error"]
    _write_csv(os.path.join(args.out, "grid.csv"), header, rows)
    _print_json({"best_lr": best.lr, "best_weight_decay": best.weight_decay})
    return 0


def cmd_synth(args) -> int:
    from .synth import SyntheticSpec, generate, write_bundle

    concepts = []
    for tok in args.concepts.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if ":" not in tok:
            raise ConfigError(f"concept spec {tok!r} must look like name:count")
        name, _, count = tok.partition(":")
        try:
            concepts.append((name.strip(), int(count)))
        except ValueError as exc:
            raise ConfigError(f"bad category count in {tok!r}") from exc

    spec = SyntheticSpec(
        n=args.n,
        dim=args.dim,
        concepts=concepts,
        noise=args.noise,
        seed=args.seed,
        within_concept_cos=args.within_cos,
        perturb_deg=args.perturb_deg,
        basis_concept=args.basis_concept,
    )
    result = generate(spec)
    write_bundle(result, args.out)
    _print_json(
        {
            "out": args.out,
            "n": spec.n,
            "dim": spec.dim,
            "concepts": {name: k for name, k in concepts},
            "basis_concept": result.basis_concept,
            "noise": spec.noise,
            "perturb_deg": spec.perturb_deg,
            "seed": spec.seed,
        }
    )
    return 0


def cmd_mmd(args) -> int:
    bundle_a = load_bundle(args.bundle)
    bundle_b = load_bundle(args.other)
    Xa = np.asarray(bundle_a.raw, dtype=np.float64)
    Xb = np.asarray(bundle_b.raw, dtype=np.float64)
    _print_json({"mmd2": mmd2_unbiased(Xa, Xb, sigma=args.sigma)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proxyclust",
        description="concept-conditioned clustering of frozen vision-language embeddings",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("run", help="train on a bundle and write artifacts")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clustering", default=None, help="ground-truth name for scoring")
    p.add_argument("--concept", default=None, help="alias for --clustering")
    _add_train_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score predicted labels against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("zeroshot", help="training-free cosine assignment")
    p.add_argument("--bundle", required=True)
    p.add_argument("--prompts", choices=("reference", "truth-label"), default="reference")
    p.add_argument("--clustering", default=None)
    p.add_argument("--concept", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("ablate", help="subspace x features grid")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clustering", default=None)
    p.add_argument("--concept", default=None)
    p.add_argument("--subspaces", default=",".join(SUBSPACE_MODES))
    p.add_argument("--feature-list", default=",".join(FEATURE_MODES))
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-lambda", help="balance-weight sweep")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clustering", default=None)
    p.add_argument("--concept", default=None)
    p.add_argument("--grid", default=None, help="comma list of lambda values")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("grid", help="lr x weight-decay search by final loss")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("synth", help="generate a synthetic bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=600)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--concepts", default="color:3,species:3")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--within-cos", type=float, default=DEFAULT_WITHIN_COS)
    p.add_argument("--perturb-deg", type=float, default=0.0)
    p.add_argument("--basis-concept", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mmd", help="kernel two-sample statistic between two bundles")
    p.add_argument("--bundle", required=True)
    p.add_argument("--other", required=True)
    p.add_argument("--sigma", type=float, default=None)
    p.set_defaults(func=cmd_mmd)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (BundleError, ConfigError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 2
    except Exception as exc:  # numerical and runtime failures
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 3
