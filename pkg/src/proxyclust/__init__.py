"""Concept-conditioned clustering of frozen vision-language embeddings.

A frozen encoder gives one embedding per image; this package learns, per
concept (color, species, ...), a token-space mixture per image plus a small
projection of the vision features, so that k-means in the resulting space
recovers the clustering for that concept instead of the dominant one.
"""

from .bundle import (
    Bundle,
    Manifest,
    MatrixRef,
    load_bundle,
    normalize_rows,
    read_f32,
    read_u32,
    save_bundle,
    write_f32,
    write_u32,
)
from .clusterloss import (
    PairBatch,
    assign_pseudo_labels,
    concat_features,
    inter_loss,
    intra_loss,
    phase2_gradients,
    sample_pairs,
    total_loss,
)
from .errors import BundleError, ConfigError, DegenerateRowError
from .kernels import BACKEND, JIT_ENABLED
from .metrics import (
    KMeansResult,
    kmeans,
    mmd2_unbiased,
    nmi,
    rand_index,
    zero_shot_assign,
)
from .proxy import (
    SUBSPACE_MODES,
    alignment_loss,
    mixture_weights,
    phase1_gradients,
    project_vision,
    proxy_embedding,
)
from .trainer import (
    AdamState,
    TrainConfig,
    TrainReport,
    adam_step,
    alternate,
    grid_search,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BACKEND",
    "Bundle",
    "BundleError",
    "ConfigError",
    "DegenerateRowError",
    "JIT_ENABLED",
    "KMeansResult",
    "Manifest",
    "MatrixRef",
    "PairBatch",
    "SUBSPACE_MODES",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "alignment_loss",
    "alternate",
    "assign_pseudo_labels",
    "concat_features",
    "grid_search",
    "inter_loss",
    "intra_loss",
    "kmeans",
    "load_bundle",
    "mixture_weights",
    "mmd2_unbiased",
    "nmi",
    "normalize_rows",
    "phase1_gradients",
    "phase2_gradients",
    "project_vision",
    "proxy_embedding",
    "rand_index",
    "read_f32",
    "read_u32",
    "sample_pairs",
    "save_bundle",
    "total_loss",
    "write_f32",
    "write_u32",
    "zero_shot_assign",
]
