"""SGD with classic momentum, stepped lr decay, and the two-phase protocol
(classification pretraining on source classes, then finetuning)."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, augment, sample_batch
from .losses import batch_all_triplet_loss, contrastive_loss, softmax_cross_entropy
from .network import (
    NetSpec,
    ParamStore,
    PARAMETERIZED,
    TRAINABLE_KEYS,
    backward,
    forward,
    init_params,
    with_classifier,
)
from .numerics import Rng, ShapeError

__all__ = [
    "Hyper",
    "TrainHistory",
    "lr_at",
    "momentum_buffers",
    "pretrain_classification",
    "sgd_step",
    "train",
]

LOSS_KINDS = ("triplet", "classification", "contrastive")
_DECAY_EXEMPT = ("gain", "shift")  # batchnorm affine params never get weight decay


@dataclass(frozen=True)
class Hyper:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    iterations: int = 3000
    decay_milestones: tuple = (0.6, 0.8)
    p: int = 8
    k: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        ms = self.decay_milestones
        if any(not 0 < f < 1 for f in ms) or list(ms) != sorted(ms):
            raise ValueError("milestones must be ascending fractions in (0, 1)")
        if self.p < 2 or self.k < 2:
            raise ValueError("need p > 1 and k > 1")


def lr_at(iteration: int, hyper: Hyper) -> float:
    """Base lr divided by 10 for every milestone already passed."""
    if not 0 <= iteration < hyper.iterations:
        raise ValueError(f"iteration {iteration} outside [0, {hyper.iterations})")
    drops = sum(iteration >= int(f * hyper.iterations) for f in hyper.decay_milestones)
    return hyper.lr * (0.1 ** drops)


def momentum_buffers(params: ParamStore) -> ParamStore:
    """Zero velocity for every trainable tensor (running stats excluded)."""
    trainable = {k for keys in TRAINABLE_KEYS.values() for k in keys}
    return ParamStore(
        {
            lid: {k: np.zeros_like(v) for k, v in t.items() if k in trainable}
            for lid, t in params.tensors.items()
        }
    )


def sgd_step(params: ParamStore, grads: ParamStore, buffers: ParamStore, hyper: Hyper, lr: float | None = None):
    """One classic-momentum step, in place:

        g' = g + weight_decay * w      (batchnorm gain/shift exempt)
        v  = momentum * v + g'
        w  = w - lr * v
    """
    step = hyper.lr if lr is None else lr
    for lid, tensors in grads.tensors.items():
        for key, g in tensors.items():
            w = params.tensors[lid][key]
            if w.shape != g.shape:
                raise ShapeError(f"grad shape {g.shape} != param shape {w.shape} at {lid}.{key}")
            if hyper.weight_decay and key not in _DECAY_EXEMPT:
                g = g + hyper.weight_decay * w
            v = buffers.tensors[lid][key]
            v *= hyper.momentum
            v += g
            w -= step * v
    return params, buffers


@dataclass
class TrainHistory:
    """Per-iteration loss/lr records plus sparse snapshot metrics."""

    rows: list = field(default_factory=list)

    def log(self, iteration: int, loss: float, lr: float, extra: dict | None = None):
        if self.rows and iteration <= self.rows[-1]["iteration"]:
            raise ValueError("iterations must be logged in increasing order")
        row = {"iteration": iteration, "loss": loss, "lr": lr}
        if extra:
            row.update(extra)
        self.rows.append(row)

    def snapshot_columns(self) -> list:
        cols = set()
        for row in self.rows:
            cols.update(k for k in row if k not in ("iteration", "loss", "lr"))
        return sorted(cols)

    def to_csv(self, path):
        cols = ["iteration", "loss", "lr"] + self.snapshot_columns()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in self.rows:
                writer.writerow([repr(row[c]) if c in row else "" for c in cols])


def _snapshot_iterations(total: int, count: int) -> set:
    if count <= 0 or total <= 0:
        return set()
    return {max(1, round(total * j / count)) for j in range(1, count + 1)}


def train(
    net: NetSpec,
    params: ParamStore,
    ds: Dataset,
    loss_kind: str,
    hyper: Hyper,
    split: str = "train",
    eval_hooks=(),
    jitter_std: float = 0.0,
    snapshot_count: int = 10,
    contrastive_margin: float = 1.0,
):
    """Sample -> jitter -> forward -> loss -> backward -> step, repeated.

    Classification remaps the split's class ids to contiguous indices and
    requires the net's final dense to have that many outputs. eval_hooks are
    called at evenly spaced snapshot iterations (after the step) and their
    dict results land in the history row. Returns (params, history).
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss {loss_kind!r}")
    history = TrainHistory()
    if hyper.iterations == 0:
        return params, history

    class_to_idx = None
    if loss_kind == "classification":
        classes = ds.classes(split)
        final = net.layers[-1]
        if final.kind != "dense" or final.out_dim != classes.size:
            raise ValueError(
                f"classification needs a final dense with {classes.size} outputs"
            )
        class_to_idx = {int(c): i for i, c in enumerate(classes)}

    rng = Rng(hyper.seed)
    buffers = momentum_buffers(params)
    snaps = _snapshot_iterations(hyper.iterations, snapshot_count if eval_hooks else 0)
    for it in range(hyper.iterations):
        lr = lr_at(it, hyper)
        plan = sample_batch(ds, split, hyper.p, hyper.k, rng)
        x = augment(ds.features[plan.indices], jitter_std, rng)
        trace = forward(net, params, x, "train")
        out = trace.final
        if loss_kind == "triplet":
            loss = batch_all_triplet_loss(out, plan.labels)
        elif loss_kind == "contrastive":
            loss = contrastive_loss(out, plan.labels, contrastive_margin)
        else:
            target = np.array([class_to_idx[int(c)] for c in plan.labels], dtype=np.int64)
            loss = softmax_cross_entropy(out, target)
        grads, _ = backward(net, params, trace, loss.grad)
        sgd_step(params, grads, buffers, hyper, lr)
        extra = {}
        if (it + 1) in snaps:
            for hook in eval_hooks:
                extra.update(hook(it, net, params))
        history.log(it, loss.value, lr, extra)
    return params, history


def pretrain_classification(
    backbone: NetSpec, ds: Dataset, hyper: Hyper, jitter_std: float = 0.0
) -> ParamStore:
    """Train backbone + throwaway classifier on the source classes; return
    only the backbone parameters (running stats included)."""
    classes = ds.classes("source")
    if classes.size == 0:
        raise ValueError("source split is empty")
    net = with_classifier(backbone, int(classes.size))
    params = init_params(net, Rng(hyper.seed))
    if hyper.iterations:
        train(net, params, ds, "classification", hyper, split="source",
              jitter_std=jitter_std, snapshot_count=0)
    backbone_ids = [l.id for l in backbone.layers if l.kind in PARAMETERIZED]
    return params.subset(backbone_ids)
