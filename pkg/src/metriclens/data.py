"""Synthetic clustered datasets with disjoint class splits, plus the p x k sampler.

Items of a class are a unit prototype plus a perturbation inside a shared
low-rank nuisance subspace plus isotropic noise. The three splits (source /
train / test) use pairwise disjoint class sets so retrieval on the test split
is always over unseen classes.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Rng, l2_normalize_scale

__all__ = [
    "BatchPlan",
    "Dataset",
    "GenConfig",
    "SPLITS",
    "augment",
    "gen_synthetic",
    "sample_batch",
]

SPLITS = ("source", "train", "test")
_CSV_MAGIC = "# metriclens-dataset v1"


@dataclass(frozen=True)
class GenConfig:
    """Generator knobs.

    Within-class variation has two parts: a nuisance subspace shared by all
    classes (suppressing it transfers to unseen classes) and a per-class
    subspace (suppressing it only helps the classes it was learned on, which
    is what lets a network overfit).
    """

    ambient_dim: int = 32
    source_classes: int = 20
    train_classes: int = 16
    test_classes: int = 16
    items_per_class: int = 20
    prototype_scale: float = 1.0
    noise_std: float = 0.12
    nuisance_dim: int = 4
    nuisance_std: float = 0.45
    class_nuisance_dim: int = 4
    class_nuisance_std: float = 0.6
    jitter_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.ambient_dim,
            self.source_classes,
            self.train_classes,
            self.test_classes,
            self.items_per_class,
        )
        if any(c <= 0 for c in counts):
            raise ValueError("all counts must be positive")
        if self.items_per_class < 2:
            raise ValueError("every class needs at least 2 items")
        if not 0 <= self.nuisance_dim <= self.ambient_dim:
            raise ValueError("nuisance_dim must lie in [0, ambient_dim]")
        if not 0 <= self.class_nuisance_dim <= self.ambient_dim:
            raise ValueError("class_nuisance_dim must lie in [0, ambient_dim]")
        stds = (self.noise_std, self.nuisance_std, self.class_nuisance_std, self.jitter_std)
        if min(stds) < 0:
            raise ValueError("stds must be >= 0")
        if self.prototype_scale <= 0:
            raise ValueError("prototype_scale must be positive")


@dataclass(eq=False)
class Dataset:
    """Feature rows, global class labels, and a split tag per item."""

    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray

    def indices(self, split: str) -> np.ndarray:
        _check_split(split)
        return np.flatnonzero(self.split == split)

    def classes(self, split: str) -> np.ndarray:
        return np.unique(self.labels[self.indices(split)])

    def class_count(self, split: str) -> int:
        return int(self.classes(split).size)

    def features_of(self, split: str) -> np.ndarray:
        return self.features[self.indices(split)]

    def labels_of(self, split: str) -> np.ndarray:
        return self.labels[self.indices(split)]

    def save_csv(self, path):
        d = self.features.shape[1]
        lines = [_CSV_MAGIC]
        lines.append("item_id,split,label," + ",".join(f"f{j}" for j in range(d)))
        for i in range(self.features.shape[0]):
            feats = ",".join(repr(float(v)) for v in self.features[i])
            lines.append(f"{i},{self.split[i]},{int(self.labels[i])},{feats}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load_csv(cls, path) -> "Dataset":
        text = Path(path).read_text().splitlines()
        if not text or text[0] != _CSV_MAGIC:
            raise ValueError(f"{path} is not a {_CSV_MAGIC!r} file")
        header = text[1].split(",")
        if header[:3] != ["item_id", "split", "label"]:
            raise ValueError("unexpected dataset header")
        feats, labels, split = [], [], []
        for line in text[2:]:
            cells = line.split(",")
            split.append(cells[1])
            labels.append(int(cells[2]))
            feats.append([float(c) for c in cells[3:]])
        return cls(
            np.array(feats, dtype=np.float64),
            np.array(labels, dtype=np.int64),
            np.array(split, dtype="<U6"),
        )


def _check_split(split: str):
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")


def _orthonormal_rows(mat: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt; deterministic, no LAPACK dependence."""
    out = mat.astype(np.float64).copy()
    for i in range(out.shape[0]):
        for j in range(i):
            out[i] -= (out[i] @ out[j]) * out[j]
        out[i] = l2_normalize_scale(out[i], 1.0)
    return out


def gen_synthetic(cfg: GenConfig) -> Dataset:
    """Deterministic dataset for the given config.

    Per class: one random unit prototype (times prototype_scale); per item:
    prototype + shared-nuisance perturbation + per-class-nuisance
    perturbation + isotropic Gaussian noise. Class ids are assigned
    source-first, then train, then test.
    """
    rng = Rng(cfg.seed)
    d = cfg.ambient_dim
    n_classes = cfg.source_classes + cfg.train_classes + cfg.test_classes
    protos = l2_normalize_scale(rng.normal(0.0, 1.0, (n_classes, d)), 1.0)
    protos *= cfg.prototype_scale
    basis = None
    if cfg.nuisance_dim > 0:
        basis = _orthonormal_rows(rng.normal(0.0, 1.0, (cfg.nuisance_dim, d)))

    n = cfg.items_per_class
    rows, labels = [], []
    for c in range(n_classes):
        block = np.tile(protos[c], (n, 1))
        if basis is not None:
            coeffs = rng.normal(0.0, cfg.nuisance_std, (n, cfg.nuisance_dim))
            block = block + coeffs @ basis
        if cfg.class_nuisance_dim > 0:
            own = _orthonormal_rows(rng.normal(0.0, 1.0, (cfg.class_nuisance_dim, d)))
            coeffs = rng.normal(0.0, cfg.class_nuisance_std, (n, cfg.class_nuisance_dim))
            block = block + coeffs @ own
        block = block + rng.normal(0.0, cfg.noise_std, (n, d))
        rows.append(block)
        labels.append(np.full(n, c, dtype=np.int64))

    bounds = (cfg.source_classes, cfg.source_classes + cfg.train_classes)
    split = np.empty(n_classes * n, dtype="<U6")
    all_labels = np.concatenate(labels)
    split[all_labels < bounds[0]] = "source"
    split[(all_labels >= bounds[0]) & (all_labels < bounds[1])] = "train"
    split[all_labels >= bounds[1]] = "test"
    return Dataset(np.vstack(rows), all_labels, split)


@dataclass(eq=False)
class BatchPlan:
    """A sampled mini-batch: p classes times k items, m = p*k indices."""

    indices: np.ndarray
    labels: np.ndarray
    p: int
    k: int


def sample_batch(ds: Dataset, split: str, p: int, k: int, rng: Rng) -> BatchPlan:
    """Uniformly pick p distinct classes from the split, then k items per
    class (without replacement when the class has >= k items, otherwise
    with replacement)."""
    if p < 2 or k < 2:
        raise ValueError("need p > 1 and k > 1")
    classes = ds.classes(split)
    if classes.size < p:
        raise ValueError(f"split {split!r} has {classes.size} classes, need {p}")
    chosen = classes[rng.choice(classes.size, p)]
    split_idx = ds.indices(split)
    split_labels = ds.labels[split_idx]
    picks = []
    for c in chosen:
        pool = split_idx[split_labels == c]
        replace = pool.size < k
        picks.append(pool[rng.choice(pool.size, k, replace=replace)])
    indices = np.concatenate(picks)
    return BatchPlan(indices, ds.labels[indices], p, k)


def augment(batch, jitter_std: float, rng: Rng) -> np.ndarray:
    """Add isotropic Gaussian jitter; the identity when jitter_std is zero."""
    if jitter_std < 0:
        raise ValueError("jitter_std must be >= 0")
    x = np.asarray(batch, dtype=np.float64)
    if jitter_std == 0:
        return x.copy()
    return x + rng.normal(0.0, jitter_std, x.shape)
