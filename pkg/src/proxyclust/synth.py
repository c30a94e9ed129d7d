"""Synthetic bundles with known ground truth for every concept.

The generator plants one orthonormal frame and gives each concept a block of
it: one axis per category plus a shared concept-mean axis. A category
direction is sqrt(1-rho) * own_axis + sqrt(rho) * concept_mean, so categories
of the same concept are equicorrelated with cosine rho (they are shades of
one attribute, not unrelated directions) while different concepts stay
mutually orthogonal. A sample's raw feature is the normalized sum of its
category direction per concept plus iid Gaussian noise with per-coordinate
standard deviation ``noise``.

The emitted reference bases (token, prompt, bare word) are the basis
concept's category directions, optionally perturbed: each basis row is tilted
by ``perturb_deg`` degrees, half toward the axis that distinguishes the next
category of the same concept and half toward a spare axis outside every
concept span. That mimics reference words that are partly conflated with a
sibling category and partly off-topic: the in-span half narrows the score
gap to the neighbor, the out-of-span half keeps rows spread apart, so cosine
assignment loses marginal samples to noise without any single neighbor
absorbing a whole category. Ground-truth labels for all concepts and exact
(unperturbed) class-prompt matrices ride along, and the projection init is
the identity, so zero-shot assignment with an unperturbed basis is exact at
zero noise.

The sampled world (frame, labels, noise) depends only on the seed, never on
which concept is chosen as basis or on the perturbation, so bundles for
concept A and concept B at the same seed describe the same dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bundle import Manifest, normalize_rows, save_bundle
from .errors import ConfigError

_TAG_WORLD = 0x776F726C

DEFAULT_WITHIN_COS = 0.8


@dataclass
class SyntheticSpec:
    n: int
    dim: int
    concepts: list  # (name, category_count) in emission order
    noise: float = 0.1
    seed: int = 0
    within_concept_cos: float = DEFAULT_WITHIN_COS
    perturb_deg: float = 0.0
    basis_concept: str | None = None

    def validate(self) -> "SyntheticSpec":
        if self.n < 2:
            raise ConfigError(f"need n >= 2 samples, got {self.n}")
        if not self.concepts:
            raise ConfigError("need at least one concept")
        names = [c[0] for c in self.concepts]
        if len(set(names)) != len(names):
            raise ConfigError("concept names must be unique")
        for name, k in self.concepts:
            if not name:
                raise ConfigError("concept names must be non-empty")
            if k < 2:
                raise ConfigError(f"concept {name!r} needs >= 2 categories, got {k}")
        axes = (
            sum(k for _, k in self.concepts)
            + len(self.concepts)
            + max(k for _, k in self.concepts)
        )
        if axes > self.dim:
            raise ConfigError(
                f"dimension too small to host all requested orthogonal directions: "
                f"need {axes}, have {self.dim}"
            )
        if self.noise < 0.0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if not 0.0 <= self.within_concept_cos < 1.0:
            raise ConfigError(
                f"within_concept_cos must be in [0, 1), got {self.within_concept_cos}"
            )
        if not 0.0 <= self.perturb_deg < 90.0:
            raise ConfigError(f"perturb_deg must be in [0, 90), got {self.perturb_deg}")
        if self.basis_concept is not None and self.basis_concept not in names:
            raise ConfigError(f"basis_concept {self.basis_concept!r} not among {names}")
        return self


@dataclass
class SynthResult:
    spec: SyntheticSpec
    raw: np.ndarray                       # n x dim, unit rows
    labels: dict                          # concept -> int64 labels
    directions: dict                      # concept -> true category directions
    basis_concept: str
    basis: np.ndarray                     # emitted (possibly perturbed) basis
    projection_init: np.ndarray
    reference_words: list = field(default_factory=list)
    prompt_template: str = ""


def _perturb_rows(D: np.ndarray, axes: np.ndarray, spare: np.ndarray, deg: float) -> np.ndarray:
    """Tilt row k by ``deg`` degrees, half toward the next category's axis
    and half toward a spare axis outside every concept span.

    The in-span half narrows the score gap to the neighbor (conflated
    reference words); the out-of-span half keeps the rows spread out so no
    single neighbor absorbs all the damage. Both components are orthogonal
    to row k, so the tilt is an exact rotation by ``deg``.
    """
    if deg == 0.0:
        return D.copy()
    theta = np.deg2rad(deg)
    K = D.shape[0]
    out = np.empty_like(D)
    for k in range(K):
        w = (axes[(k + 1) % K] + spare[k]) / np.sqrt(2.0)
        w = w - (D[k] @ w) * D[k]
        wn = np.linalg.norm(w)
        if wn == 0.0:
            raise ConfigError("cannot perturb: tilt direction is collinear with the row")
        out[k] = np.cos(theta) * D[k] + np.sin(theta) * (w / wn)
    return out


def generate(spec: SyntheticSpec) -> SynthResult:
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _TAG_WORLD]))

    max_k = max(k for _, k in spec.concepts)
    axes = sum(k for _, k in spec.concepts) + len(spec.concepts) + max_k
    frame, _ = np.linalg.qr(rng.normal(size=(spec.dim, axes)))
    spare = np.ascontiguousarray(frame[:, axes - max_k :].T)

    rho = spec.within_concept_cos
    directions: dict[str, np.ndarray] = {}
    cat_axes_by_concept: dict[str, np.ndarray] = {}
    col = 0
    for name, k in spec.concepts:
        mean_axis = frame[:, col]
        cat_axes = frame[:, col + 1 : col + 1 + k]
        col += 1 + k
        D = np.sqrt(1.0 - rho) * cat_axes.T + np.sqrt(rho) * mean_axis[None, :]
        directions[name] = D  # unit rows: (1-rho) + rho = 1 on orthonormal axes
        cat_axes_by_concept[name] = np.ascontiguousarray(cat_axes.T)

    labels = {name: rng.integers(0, k, size=spec.n).astype(np.int64) for name, k in spec.concepts}

    raw = np.zeros((spec.n, spec.dim))
    for name, _ in spec.concepts:
        raw += directions[name][labels[name]]
    raw += rng.normal(0.0, spec.noise, size=(spec.n, spec.dim)) if spec.noise > 0 else 0.0
    raw = normalize_rows(raw)

    basis_concept = spec.basis_concept or spec.concepts[0][0]
    basis = _perturb_rows(
        directions[basis_concept],
        cat_axes_by_concept[basis_concept],
        spare,
        spec.perturb_deg,
    )

    return SynthResult(
        spec=spec,
        raw=raw,
        labels=labels,
        directions=directions,
        basis_concept=basis_concept,
        basis=basis,
        projection_init=np.eye(spec.dim),
        reference_words=[f"{basis_concept}_{i}" for i in range(basis.shape[0])],
        prompt_template=f"an item whose {basis_concept} is *",
    )


def write_bundle(result: SynthResult, path: str) -> Manifest:
    """Persist a generated world as a loadable bundle directory."""
    return save_bundle(
        path,
        concept=result.basis_concept,
        prompt_template=result.prompt_template,
        reference_words=result.reference_words,
        raw=result.raw,
        token_basis=result.basis,
        prompt_basis=result.basis,
        word_basis=result.basis,
        projection_init=result.projection_init,
        labels=result.labels,
        class_prompts={name: D for name, D in result.directions.items()},
    )
