"""Mini-batch losses over embedding rows.

Every loss returns its value together with the exact analytic gradient with
respect to the input rows, so callers can chain straight into network
backprop without autograd machinery.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, pairwise_sq_euclidean

__all__ = [
    "LossOutput",
    "NoValidPairError",
    "NoValidTripletError",
    "batch_all_triplet_loss",
    "contrastive_loss",
    "count_valid_triplets",
    "sigmoid",
    "smooth_triplet",
    "softmax_cross_entropy",
]

DISTANCES = ("sq_euclidean", "neg_dot")


class NoValidTripletError(ValueError):
    """Batch labels admit no (anchor, positive, negative) triplet."""


class NoValidPairError(ValueError):
    """Batch too small to form any pair."""


@dataclass
class LossOutput:
    """Loss value, gradient w.r.t. the embedding rows, and (for triplet
    losses) the number of valid triplets averaged over."""

    value: float
    grad: np.ndarray
    triplet_count: int = 0


def sigmoid(z):
    """Numerically stable logistic function."""
    a = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(a))
    out = np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def smooth_triplet(d_ap: float, d_an: float) -> float:
    """Soft triplet term softplus(d_ap - d_an).

    Equals ln 2 when the two distances tie and decays toward zero as the
    negative moves beyond the positive. Evaluated on the overflow-free
    branch, so a gap of +1000 comes back as exactly 1000.
    """
    return float(np.logaddexp(0.0, float(d_ap) - float(d_an)))


def count_valid_triplets(labels) -> int:
    """Number of ordered (a, p, n) triples with label(a) = label(p), a != p,
    and label(n) different."""
    lab = np.asarray(labels).ravel()
    m = lab.size
    total = 0
    for count in np.unique(lab, return_counts=True)[1]:
        c = int(count)
        total += c * (c - 1) * (m - c)
    return total


def _check_batch(emb, labels):
    x = np.asarray(emb, dtype=np.float64)
    lab = np.asarray(labels).ravel()
    if x.ndim != 2:
        raise ShapeError(f"embeddings must be 2-d, got {x.ndim}-d")
    if lab.size != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} rows but {lab.size} labels")
    return x, lab


def _pair_grad_sq_euclidean(coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    # d/dx_r of sum_ij coef[i,j] * ||x_i - x_j||^2, via W = coef + coef^T
    w = coef + coef.T
    return 2.0 * (w.sum(axis=1)[:, None] * x - w @ x)


def batch_all_triplet_loss(emb, labels, distance: str = "sq_euclidean") -> LossOutput:
    """Mean soft triplet loss over every valid triplet in the batch.

    Each anchor is paired with all of its same-label rows (positives) and
    all other-label rows (negatives). The gradient is accumulated through
    per-pair distance coefficients, which keeps memory at O(m^2) for a
    batch of m rows.

    distance selects squared Euclidean (default) or negative dot product.
    """
    x, lab = _check_batch(emb, labels)
    if distance not in DISTANCES:
        raise ValueError(f"unknown distance {distance!r}")
    m = x.shape[0]
    if distance == "sq_euclidean":
        dist = pairwise_sq_euclidean(x, x)
    else:
        dist = -(x @ x.T)
    coef = np.zeros((m, m))
    total = 0.0
    count = 0
    for a in range(m):
        pos = np.flatnonzero(lab == lab[a])
        pos = pos[pos != a]
        neg = np.flatnonzero(lab != lab[a])
        if pos.size == 0 or neg.size == 0:
            continue
        gaps = dist[a, pos][:, None] - dist[a, neg][None, :]
        total += float(np.logaddexp(0.0, gaps).sum())
        count += gaps.size
        slope = sigmoid(gaps)
        coef[a, pos] += slope.sum(axis=1)
        coef[a, neg] -= slope.sum(axis=0)
    if count == 0:
        raise NoValidTripletError("batch has no valid (a, p, n) triplet")
    coef /= count
    if distance == "sq_euclidean":
        grad = _pair_grad_sq_euclidean(coef, x)
    else:
        grad = -((coef + coef.T) @ x)
    return LossOutput(total / count, grad, count)


def softmax_cross_entropy(logits, labels) -> LossOutput:
    """Mean negative log-likelihood of integer labels under row softmax."""
    z, lab = _check_batch(logits, labels)
    lab = lab.astype(np.int64)
    m, n_classes = z.shape
    if lab.size and (lab.min() < 0 or lab.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(m)
    value = float(-logp[rows, lab].mean())
    grad = np.exp(logp)
    grad[rows, lab] -= 1.0
    grad /= m
    return LossOutput(value, grad)


def contrastive_loss(emb, labels, margin: float = 1.0) -> LossOutput:
    """Mean over all unordered pairs: squared distance for same-label pairs,
    squared hinge max(0, margin - euclidean)^2 for different-label pairs."""
    x, lab = _check_batch(emb, labels)
    m = x.shape[0]
    if m < 2:
        raise NoValidPairError("need at least two rows to form a pair")
    dist = pairwise_sq_euclidean(x, x)
    eucl = np.sqrt(dist)
    same = lab[:, None] == lab[None, :]
    iu, ju = np.triu_indices(m, k=1)
    n_pairs = iu.size
    coef = np.zeros((m, m))

    same_pair = same[iu, ju]
    value = float(dist[iu, ju][same_pair].sum())
    coef[iu[same_pair], ju[same_pair]] = 1.0

    hinge = margin - eucl[iu, ju]
    diff_pair = ~same_pair
    active = diff_pair & (hinge > 0)
    value += float((hinge[active] ** 2).sum())
    # d(hinge^2)/d(sq dist) = -hinge / euclidean; coincident points keep the
    # zero subgradient since the hinge is not differentiable there
    safe = active & (eucl[iu, ju] > 0)
    coef[iu[safe], ju[safe]] = -hinge[safe] / eucl[iu, ju][safe]

    value /= n_pairs
    coef /= n_pairs
    return LossOutput(value, _pair_grad_sq_euclidean(coef, x))
