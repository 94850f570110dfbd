"""Layer-tapped feature extraction and retrieval metrics.

Features are taken from a designated layer in eval mode, max-reduced to a
common width, and unit-normalized (ranking by squared Euclidean distance on
unit vectors, so any training-time scaling cancels). Judgment-based metrics
(AP, mP@k) honor per-query positive and ignore sets: ignored items are
dropped from the ranking before anything is scored, and a query whose
positive set is empty is excluded rather than failed.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .network import NetSpec, ParamStore, forward
from .numerics import Rng, ShapeError, group_max_reduce, l2_normalize_scale, pairwise_sq_euclidean

__all__ = [
    "EmbeddingSet",
    "Judgment",
    "MetricReport",
    "average_precision",
    "build_emh",
    "build_synthetic_judgments",
    "extract_features",
    "layer_sweep",
    "mean_average_precision",
    "mean_precision_at_k",
    "rank_items",
    "recall_at_k",
]

SETUPS = ("E", "M", "H")


@dataclass(eq=False)
class EmbeddingSet:
    """Unit-norm feature rows for one tapped layer over one item set."""

    layer_id: str
    features: np.ndarray
    item_ids: np.ndarray
    labels: np.ndarray
    split: str = ""

    def __post_init__(self):
        norms = np.linalg.norm(self.features, axis=1)
        if self.features.shape[0] and np.abs(norms - 1.0).max() > 1e-9:
            raise ValueError("embedding rows must be unit-norm")

    def __len__(self):
        return self.features.shape[0]


def extract_features(
    net: NetSpec,
    params: ParamStore,
    items,
    layer_id: str,
    target_dim: int | None,
    item_ids=None,
    labels=None,
    split: str = "",
) -> EmbeddingSet:
    """Eval-mode forward up to the tap, group-max down to target_dim when the
    layer is wider, then unit-normalize each row. target_dim None keeps the
    layer's native width."""
    if layer_id not in net.taps:
        raise ValueError(f"layer {layer_id!r} is not a tap of this net")
    items = np.asarray(items, dtype=np.float64)
    trace = forward(net, params, items, "eval", upto=layer_id)
    feats = trace.outputs[layer_id]
    if target_dim is not None and feats.shape[1] != target_dim:
        feats = group_max_reduce(feats, target_dim)
    feats = l2_normalize_scale(feats, 1.0)
    n = feats.shape[0]
    item_ids = np.arange(n, dtype=np.int64) if item_ids is None else np.asarray(item_ids, dtype=np.int64)
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    if item_ids.size != n or labels.size != n:
        raise ShapeError("item_ids/labels must match the number of rows")
    return EmbeddingSet(layer_id, feats, item_ids, labels, split)


def rank_items(db: EmbeddingSet, query_row: int) -> np.ndarray:
    """All other item ids ordered by squared distance to the query row,
    distance ties broken by lower item id."""
    d = ((db.features - db.features[query_row]) ** 2).sum(axis=1)
    order = np.lexsort((db.item_ids, d))
    ranked = db.item_ids[order]
    return ranked[ranked != db.item_ids[query_row]]


def _recalls(db: EmbeddingSet, ks) -> dict:
    """recall@k for several ks from one ranking pass per query."""
    if any(k < 1 for k in ks):
        raise ValueError("k must be >= 1")
    n = len(db)
    if n < 2:
        raise ValueError("need at least 2 items")
    dist = pairwise_sq_euclidean(db.features, db.features)
    kmax = max(ks)
    hits = {k: 0 for k in ks}
    for row in range(n):
        order = np.lexsort((db.item_ids, dist[row]))
        order = order[order != row][:kmax]
        same = db.labels[order] == db.labels[row]
        for k in ks:
            if same[:k].any():
                hits[k] += 1
    return {k: hits[k] / n for k in ks}


def recall_at_k(db: EmbeddingSet, k: int) -> float:
    """Fraction of items whose top-k neighbors (self excluded, distance ties
    broken by lower item id) contain a same-class item."""
    return _recalls(db, (k,))[k]


@dataclass(frozen=True)
class Judgment:
    """Positive and ignore item-id sets for one query."""

    positive: frozenset
    ignore: frozenset

    def __post_init__(self):
        if self.positive & self.ignore:
            raise ValueError("positive and ignore sets overlap")


def average_precision(ranked_ids, judgment: Judgment):
    """AP after dropping ignored ids from the ranking.

    Positives that never appear still count in the denominator. Returns
    None when the positive set is empty (query excluded, not an error).
    """
    positives = judgment.positive
    if not positives:
        return None
    hits = 0
    rank = 0
    total = 0.0
    for item in ranked_ids:
        if item in judgment.ignore:
            continue
        rank += 1
        if item in positives:
            hits += 1
            total += hits / rank
    return total / len(positives)


def mean_average_precision(rankings: dict, judgments: dict) -> float:
    """Mean AP over non-excluded queries."""
    scores = [average_precision(rankings[q], j) for q, j in judgments.items()]
    scores = [s for s in scores if s is not None]
    if not scores:
        raise ValueError("every query was excluded")
    return float(np.mean(scores))


def mean_precision_at_k(rankings: dict, judgments: dict, k: int) -> float:
    """Mean over non-excluded queries of (positives in filtered top-k) / k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = []
    for q, judgment in judgments.items():
        if not judgment.positive:
            continue
        kept = [i for i in rankings[q] if i not in judgment.ignore][:k]
        scores.append(sum(1 for i in kept if i in judgment.positive) / k)
    if not scores:
        raise ValueError("every query was excluded")
    return float(np.mean(scores))


def build_emh(raw: dict, setup: str) -> dict:
    """Assemble per-query judgments for one of the three setups.

    raw maps query id -> {"easy": set, "hard": set, "junk": set} (pairwise
    disjoint). E treats only easy items as positive (hard joins the ignore
    set); M treats easy and hard as positive; H treats only hard as
    positive (easy joins the ignore set). Junk is always ignored.
    """
    if setup not in SETUPS:
        raise ValueError(f"setup must be one of {SETUPS}, got {setup!r}")
    out = {}
    for q, sets in raw.items():
        easy, hard, junk = (frozenset(sets[k]) for k in ("easy", "hard", "junk"))
        if easy & hard or easy & junk or hard & junk:
            raise ValueError(f"raw sets for query {q} overlap")
        if setup == "E":
            out[q] = Judgment(easy, hard | junk)
        elif setup == "M":
            out[q] = Judgment(easy | hard, junk)
        else:
            out[q] = Judgment(hard, easy | junk)
    return out


def build_synthetic_judgments(
    db: EmbeddingSet,
    rng: Rng,
    junk_per_query: int = 1,
    easy_fraction: float = 1.0 / 3.0,
    dup_std: float = 1e-3,
):
    """Judged retrieval set over an embedding database.

    For each query, the nearest third (by distance) of its same-class items
    are easy positives and the rest hard positives. junk_per_query jittered
    near-duplicates of every query are appended to the database and ignored
    by all queries. Returns (augmented EmbeddingSet, raw judgment dict).
    """
    n = len(db)
    dist = pairwise_sq_euclidean(db.features, db.features)
    next_id = int(db.item_ids.max()) + 1 if n else 0
    junk_feats, junk_ids, junk_labels = [], [], []
    for row in range(n):
        for _ in range(junk_per_query):
            noisy = db.features[row] + rng.normal(0.0, dup_std, db.features.shape[1])
            junk_feats.append(l2_normalize_scale(noisy, 1.0))
            junk_ids.append(next_id)
            junk_labels.append(int(db.labels[row]))
            next_id += 1
    all_junk = frozenset(junk_ids)

    raw = {}
    for row in range(n):
        qid = int(db.item_ids[row])
        mates = np.flatnonzero(db.labels == db.labels[row])
        mates = mates[mates != row]
        order = mates[np.lexsort((db.item_ids[mates], dist[row, mates]))]
        n_easy = max(1, int(order.size * easy_fraction)) if order.size else 0
        raw[qid] = {
            "easy": {int(db.item_ids[i]) for i in order[:n_easy]},
            "hard": {int(db.item_ids[i]) for i in order[n_easy:]},
            "junk": set(all_junk),
        }
    if junk_feats:
        augmented = EmbeddingSet(
            db.layer_id,
            np.vstack([db.features] + [f[None, :] for f in junk_feats]),
            np.concatenate([db.item_ids, np.array(junk_ids, dtype=np.int64)]),
            np.concatenate([db.labels, np.array(junk_labels, dtype=np.int64)]),
            db.split,
        )
    else:
        augmented = db
    return augmented, raw


@dataclass
class MetricReport:
    """Scores keyed by (layer, split, metric name), all in [0, 1]."""

    scores: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def set(self, layer: str, split: str, metric: str, value: float):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"score {value} outside [0, 1]")
        self.scores[(layer, split, metric)] = float(value)

    def get(self, layer: str, split: str, metric: str) -> float:
        return self.scores[(layer, split, metric)]

    def to_json_str(self) -> str:
        nested = {}
        for (layer, split, metric), value in self.scores.items():
            nested.setdefault(layer, {}).setdefault(split, {})[metric] = value
        doc = {"meta": self.meta, "scores": nested}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    def save_json(self, path):
        Path(path).write_text(self.to_json_str())

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer", "split", "metric", "score"])
            for key in sorted(self.scores):
                writer.writerow([key[0], key[1], key[2], repr(self.scores[key])])

    @classmethod
    def from_json(cls, path) -> "MetricReport":
        doc = json.loads(Path(path).read_text())
        report = cls(meta=doc.get("meta", {}))
        for layer, per_split in doc["scores"].items():
            for split, metrics in per_split.items():
                for metric, value in metrics.items():
                    report.set(layer, split, metric, value)
        return report


def layer_sweep(
    net: NetSpec,
    params: ParamStore,
    ds: Dataset,
    taps,
    target_dim: int | None,
    ks=(1,),
    splits=("train", "test"),
) -> MetricReport:
    """recall_at_k for every tap x split x k."""
    taps = tuple(taps)
    if not taps:
        raise ValueError("need at least one tap")
    report = MetricReport()
    for tap in taps:
        for split in splits:
            idx = ds.indices(split)
            emb = extract_features(
                net, params, ds.features[idx], tap, target_dim,
                item_ids=idx, labels=ds.labels[idx], split=split,
            )
            for k, value in _recalls(emb, tuple(ks)).items():
                report.set(tap, split, f"r@{k}", value)
    return report
