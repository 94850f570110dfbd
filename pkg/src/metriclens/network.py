"""Small dense network engine with per-layer taps and exact backprop.

Layer kinds: dense, relu, batchnorm, normalize_scale. Nets are immutable
specs; parameters live in a separate mutable store keyed by layer id, with
per-layer init provenance (copied from a pretrained store, or drawn from
scratch). Forward in train mode is the single writer of batchnorm running
statistics; everything else is pure.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import NORM_EPS, DegenerateVectorError, Rng, ShapeError

__all__ = [
    "BN_EPS",
    "BN_MOMENTUM",
    "ForwardTrace",
    "LayerSpec",
    "NetConfig",
    "NetSpec",
    "ParamStore",
    "VARIANTS",
    "backbone_net",
    "build_variant",
    "backward",
    "forward",
    "grad_check",
    "init_params",
    "reset_layers",
    "with_classifier",
]

KINDS = ("dense", "relu", "batchnorm", "normalize_scale")
PARAMETERIZED = ("dense", "batchnorm")
TRAINABLE_KEYS = {"dense": ("w", "b"), "batchnorm": ("gain", "shift")}
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
VARIANTS = ("A", "B", "C", "D", "E", "F")

_PARAMS_FORMAT = "metriclens-params"
_PARAMS_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """One layer: dense layers carry dims, normalize_scale carries the scale."""

    id: str
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    scale: float = 4.0


@dataclass(frozen=True)
class NetSpec:
    """Ordered layers plus the loss attachment point, feature taps, and
    per-layer init provenance ("pretrained" or "scratch")."""

    layers: tuple
    loss_attach: str
    taps: tuple
    init_provenance: dict

    def __post_init__(self):
        if not self.layers:
            raise ValueError("net needs at least one layer")
        ids = [l.id for l in self.layers]
        if len(set(ids)) != len(ids):
            raise ValueError("layer ids must be unique")
        if self.layers[0].kind != "dense":
            raise ValueError("first layer must be dense (defines the input width)")
        for l in self.layers:
            if l.kind not in KINDS:
                raise ValueError(f"unknown layer kind {l.kind!r}")
            if l.kind == "dense" and (l.in_dim <= 0 or l.out_dim <= 0):
                raise ValueError(f"dense layer {l.id!r} needs positive dims")
            if l.kind == "normalize_scale" and l.scale <= 0:
                raise ValueError(f"layer {l.id!r} needs a positive scale")
        if self.loss_attach != self.layers[-1].id:
            raise ValueError("loss_attach must be the final layer")
        for tap in self.taps:
            if tap not in ids:
                raise ValueError(f"tap {tap!r} is not a layer id")
        parameterized = {l.id for l in self.layers if l.kind in PARAMETERIZED}
        if set(self.init_provenance) != parameterized:
            raise ValueError("init_provenance must cover exactly the parameterized layers")
        for lid, prov in self.init_provenance.items():
            if prov not in ("pretrained", "scratch"):
                raise ValueError(f"bad provenance {prov!r} for layer {lid!r}")
        self.widths()  # validates the width chain

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    def widths(self) -> dict:
        """Output width of every layer, walking the chain from the input."""
        out = {}
        width = self.layers[0].in_dim
        for l in self.layers:
            if l.kind == "dense":
                if l.in_dim != width:
                    raise ValueError(
                        f"layer {l.id!r} expects width {l.in_dim}, chain gives {width}"
                    )
                width = l.out_dim
            out[l.id] = width
        return out

    def parameterized_ids(self) -> tuple:
        return tuple(l.id for l in self.layers if l.kind in PARAMETERIZED)


@dataclass(frozen=True)
class NetConfig:
    """Widths for the shared trunk and head used by the layout variants."""

    in_dim: int = 32
    backbone_widths: tuple = (64, 64, 64)
    embed_dim: int = 64
    embed_scale: float = 4.0


_HEAD_COUNT = {"A": 1, "B": 1, "C": 1, "D": 0, "E": 2, "F": 3}


def _backbone_layers(cfg: NetConfig, provenance_for_block):
    layers, prov = [], {}
    width = cfg.in_dim
    for i, w in enumerate(cfg.backbone_widths, start=1):
        p = provenance_for_block(i)
        layers += [
            LayerSpec(f"backbone{i}_dense", "dense", width, w),
            LayerSpec(f"backbone{i}_relu", "relu"),
            LayerSpec(f"backbone{i}_bn", "batchnorm"),
        ]
        prov[f"backbone{i}_dense"] = p
        prov[f"backbone{i}_bn"] = p
        width = w
    return layers, prov, width


def build_variant(variant: str, cfg: NetConfig = NetConfig()) -> NetSpec:
    """Assemble one of the six layout variants over the shared backbone.

    A: pretrained backbone + one scratch embedding dense.
    B: as A, but the last backbone block is scratch too.
    C: everything scratch.
    D: as A with the embedding dense removed, so the loss sits directly on
       the (normalized) backbone output.
    E/F: as A plus one/two extra embedding denses, ReLU between consecutive
       ones; all head denses share cfg.embed_dim.
    The final layer is always the unit-normalize-and-scale head feeding the
    training loss.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    n_blocks = len(cfg.backbone_widths)

    def block_prov(i):
        if variant == "C":
            return "scratch"
        if variant == "B" and i == n_blocks:
            return "scratch"
        return "pretrained"

    layers, prov, width = _backbone_layers(cfg, block_prov)
    for j in range(1, _HEAD_COUNT[variant] + 1):
        if j > 1:
            layers.append(LayerSpec(f"embed{j - 1}_relu", "relu"))
        layers.append(LayerSpec(f"embed{j}", "dense", width, cfg.embed_dim))
        prov[f"embed{j}"] = "scratch"
        width = cfg.embed_dim
    layers.append(LayerSpec("unit_scale", "normalize_scale", scale=cfg.embed_scale))
    taps = tuple(f"backbone{i}_bn" for i in range(1, len(cfg.backbone_widths) + 1))
    taps += tuple(f"embed{j}" for j in range(1, _HEAD_COUNT[variant] + 1))
    return NetSpec(tuple(layers), "unit_scale", taps, prov)


def backbone_net(cfg: NetConfig = NetConfig()) -> NetSpec:
    """The backbone blocks alone (all scratch); the shared pretraining trunk."""
    layers, prov, _ = _backbone_layers(cfg, lambda i: "scratch")
    taps = tuple(f"backbone{i}_bn" for i in range(1, len(cfg.backbone_widths) + 1))
    return NetSpec(tuple(layers), layers[-1].id, taps, prov)


def with_classifier(net: NetSpec, n_classes: int, lid: str = "classifier") -> NetSpec:
    """Swap any trailing normalize head for a scratch classification dense."""
    if n_classes <= 0:
        raise ValueError("n_classes must be positive")
    body = net.layers[:-1] if net.layers[-1].kind == "normalize_scale" else net.layers
    width = net.widths()[body[-1].id]
    layers = tuple(body) + (LayerSpec(lid, "dense", width, n_classes),)
    prov = {l.id: net.init_provenance[l.id] for l in body if l.kind in PARAMETERIZED}
    prov[lid] = "scratch"
    return NetSpec(layers, lid, net.taps, prov)


@dataclass
class ParamStore:
    """Per-layer tensors keyed by layer id.

    Dense layers hold w (in x out) and b; batchnorm holds gain, shift and
    the running mean/var that train-mode forward maintains.
    """

    tensors: dict = field(default_factory=dict)

    def copy(self) -> "ParamStore":
        return ParamStore(
            {lid: {k: v.copy() for k, v in t.items()} for lid, t in self.tensors.items()}
        )

    def subset(self, ids) -> "ParamStore":
        wanted = set(ids)
        return ParamStore(
            {
                lid: {k: v.copy() for k, v in t.items()}
                for lid, t in self.tensors.items()
                if lid in wanted
            }
        )

    def save(self, path):
        doc = {
            "format": _PARAMS_FORMAT,
            "version": _PARAMS_VERSION,
            "layers": {
                lid: {
                    key: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                    for key, arr in tensors.items()
                }
                for lid, tensors in self.tensors.items()
            },
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "ParamStore":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != _PARAMS_FORMAT:
            raise ValueError(f"not a {_PARAMS_FORMAT} file")
        if doc.get("version") != _PARAMS_VERSION:
            raise ValueError(f"unsupported params version {doc.get('version')!r}")
        tensors = {}
        for lid, entries in doc["layers"].items():
            tensors[lid] = {
                key: np.array(e["data"], dtype=np.float64).reshape(e["shape"])
                for key, e in entries.items()
            }
        return cls(tensors)


def _scratch_tensors(layer: LayerSpec, width: int, rng: Rng) -> dict:
    if layer.kind == "dense":
        std = np.sqrt(2.0 / layer.in_dim)
        return {
            "w": rng.normal(0.0, std, (layer.in_dim, layer.out_dim)),
            "b": np.zeros(layer.out_dim),
        }
    return {
        "gain": np.ones(width),
        "shift": np.zeros(width),
        "run_mean": np.zeros(width),
        "run_var": np.ones(width),
    }


def init_params(net: NetSpec, rng: Rng, pretrained: ParamStore | None = None) -> ParamStore:
    """Draw scratch layers (Gaussian, std sqrt(2/in_dim), zero bias) and copy
    pretrained layers verbatim, running statistics included."""
    widths = net.widths()
    tensors = {}
    for layer in net.layers:
        if layer.kind not in PARAMETERIZED:
            continue
        if net.init_provenance[layer.id] == "pretrained":
            if pretrained is None or layer.id not in pretrained.tensors:
                raise ValueError(f"layer {layer.id!r} needs a pretrained store")
            src = pretrained.tensors[layer.id]
            fresh = _scratch_tensors(layer, widths[layer.id], Rng(0))
            if set(src) != set(fresh) or any(src[k].shape != fresh[k].shape for k in fresh):
                raise ShapeError(f"pretrained tensors for {layer.id!r} have wrong shapes")
            tensors[layer.id] = {k: v.copy() for k, v in src.items()}
        else:
            tensors[layer.id] = _scratch_tensors(layer, widths[layer.id], rng)
    return ParamStore(tensors)


def reset_layers(params: ParamStore, net: NetSpec, ids, rng: Rng) -> ParamStore:
    """Redraw the listed layers from the scratch scheme; all others are
    copied bit for bit."""
    targets = set(ids)
    known = set(net.parameterized_ids())
    unknown = targets - known
    if unknown:
        raise ValueError(f"cannot reset unknown layers {sorted(unknown)}")
    widths = net.widths()
    out = params.copy()
    for layer in net.layers:
        if layer.id in targets:
            out.tensors[layer.id] = _scratch_tensors(layer, widths[layer.id], rng)
    return out


@dataclass
class ForwardTrace:
    """Every layer's output for one batch, plus backward-pass caches."""

    mode: str
    batch: np.ndarray
    outputs: dict
    cache: dict
    last_id: str

    @property
    def final(self) -> np.ndarray:
        return self.outputs[self.last_id]


def forward(net: NetSpec, params: ParamStore, batch, mode: str, upto: str | None = None) -> ForwardTrace:
    """Run the net over a batch.

    Train mode normalizes batchnorm with batch statistics and updates the
    running statistics in place; eval mode reads the running statistics and
    never writes. With upto set, computation stops after that layer.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"batch must be 2-d, got {x.ndim}-d")
    if x.shape[1] != net.in_dim:
        raise ShapeError(f"batch width {x.shape[1]} != net input width {net.in_dim}")
    if upto is not None and all(l.id != upto for l in net.layers):
        raise ValueError(f"no layer {upto!r}")
    has_bn = any(l.kind == "batchnorm" for l in net.layers)
    if mode == "train" and has_bn and x.shape[0] < 2:
        raise ValueError("train-mode batchnorm needs a batch of at least 2 rows")

    outputs, cache = {}, {}
    cur = x
    for layer in net.layers:
        if layer.kind == "dense":
            t = params.tensors[layer.id]
            cur = cur @ t["w"] + t["b"]
        elif layer.kind == "relu":
            cur = np.maximum(cur, 0.0)
        elif layer.kind == "batchnorm":
            t = params.tensors[layer.id]
            if mode == "train":
                mu = cur.mean(axis=0)
                var = cur.var(axis=0)
                inv = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (cur - mu) * inv
                t["run_mean"][:] = (1.0 - BN_MOMENTUM) * t["run_mean"] + BN_MOMENTUM * mu
                t["run_var"][:] = (1.0 - BN_MOMENTUM) * t["run_var"] + BN_MOMENTUM * var
                cache[layer.id] = (xhat, inv)
            else:
                inv = 1.0 / np.sqrt(t["run_var"] + BN_EPS)
                xhat = (cur - t["run_mean"]) * inv
            cur = t["gain"] * xhat + t["shift"]
        else:  # normalize_scale
            norms = np.linalg.norm(cur, axis=1)
            if np.any(norms <= NORM_EPS):
                bad = int(np.argmin(norms))
                raise DegenerateVectorError(f"row {bad} degenerate at layer {layer.id!r}")
            unit = cur / norms[:, None]
            cache[layer.id] = (unit, norms)
            cur = layer.scale * unit
        outputs[layer.id] = cur
        if layer.id == upto:
            break
    return ForwardTrace(mode, x, outputs, cache, layer.id)


def backward(net: NetSpec, params: ParamStore, trace: ForwardTrace, grad_out):
    """Chain-rule pass: returns (parameter gradients, gradient w.r.t. batch).

    Requires a full train-mode trace from this net.
    """
    if trace.mode != "train":
        raise ValueError("backward needs a train-mode trace")
    if trace.last_id != net.layers[-1].id:
        raise ValueError("trace does not cover the whole net")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != trace.final.shape:
        raise ShapeError(f"grad_out shape {g.shape} != output shape {trace.final.shape}")

    grads = {}
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        x_in = trace.outputs[net.layers[i - 1].id] if i > 0 else trace.batch
        if layer.kind == "dense":
            t = params.tensors[layer.id]
            grads[layer.id] = {"w": x_in.T @ g, "b": g.sum(axis=0)}
            g = g @ t["w"].T
        elif layer.kind == "relu":
            g = g * (x_in > 0)  # subgradient 0 at the kink
        elif layer.kind == "batchnorm":
            if layer.id not in trace.cache:
                raise ValueError(f"trace has no train cache for {layer.id!r}")
            xhat, inv = trace.cache[layer.id]
            gain = params.tensors[layer.id]["gain"]
            m = xhat.shape[0]
            dxhat = g * gain
            grads[layer.id] = {"gain": (g * xhat).sum(axis=0), "shift": g.sum(axis=0)}
            # standard batch-statistics chain rule (biased variance)
            g = (inv / m) * (
                m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
            )
        else:  # normalize_scale
            unit, norms = trace.cache[layer.id]
            g = (layer.scale / norms)[:, None] * (
                g - unit * (unit * g).sum(axis=1, keepdims=True)
            )
    ordered = {l.id: grads[l.id] for l in net.layers if l.id in grads}
    return ParamStore(ordered), g


def grad_check(
    net: NetSpec,
    params: ParamStore,
    loss_fn,
    batch,
    labels,
    step: float = 1e-5,
    samples_per_tensor: int = 20,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    over a deterministic sample of each trainable tensor.

    loss_fn(final_output, labels) must return a LossOutput-like object with
    .value and .grad. Train-mode losses never read batchnorm running stats,
    so the finite-difference evaluations can share one working store.
    """
    work = params.copy()
    trace = forward(net, work, batch, "train")
    out = loss_fn(trace.final, labels)
    grads, _ = backward(net, work, trace, out.grad)
    rng = Rng(seed)
    worst = 0.0
    for layer in net.layers:
        if layer.kind not in PARAMETERIZED:
            continue
        for key in TRAINABLE_KEYS[layer.kind]:
            flat = work.tensors[layer.id][key].ravel()
            gflat = grads.tensors[layer.id][key].ravel()
            n = flat.size
            take = min(samples_per_tensor, n)
            idx = rng.choice(n, take) if take < n else np.arange(n)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                up = loss_fn(forward(net, work, batch, "train").final, labels).value
                flat[i] = orig - step
                down = loss_fn(forward(net, work, batch, "train").final, labels).value
                flat[i] = orig
                numeric = (up - down) / (2.0 * step)
                analytic = gflat[i]
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
                worst = max(worst, rel)
    return worst
