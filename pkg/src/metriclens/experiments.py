"""Canned experiment registry and the run harness.

Every run is fully determined by its config: the master seed is expanded
into named sub-seeds (data / pretrain / finetune / init), artifacts are
written with stable formatting, and the manifest records the config hash
plus a digest of every emitted file, so identical configs reproduce
identical bytes.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from .data import Dataset, GenConfig, gen_synthetic
from .evaluation import layer_sweep
from .network import NetConfig, NetSpec, backbone_net, build_variant, init_params, with_classifier
from .numerics import Rng, derive_seed
from .training import Hyper, pretrain_classification, train

__all__ = [
    "CONFIG_VERSION",
    "EXPERIMENT_IDS",
    "ExperimentConfig",
    "RunManifest",
    "config_hash",
    "run_experiment",
]

CONFIG_VERSION = 1
EXPERIMENT_IDS = (
    "fig2-sweep",
    "fig3-losscmp",
    "fig4-pretrain",
    "fig5-losspos",
    "fig7-dims",
    "fig8-scale",
)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "fig2-sweep"
    gen: GenConfig = GenConfig()
    net: NetConfig = NetConfig()
    pretrain: Hyper = Hyper(iterations=2000, seed=1)
    finetune: Hyper = Hyper(iterations=3000, seed=2)
    loss: str = "triplet"
    taps: tuple | None = None
    target_dim: int | None = None
    ks: tuple = (1, 2, 4, 8)
    snapshot_count: int = 10
    seed: int | None = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_IDS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.target_dim is not None and self.target_dim <= 0:
            raise ValueError("target_dim must be positive (or null for native width)")
        if not self.ks:
            raise ValueError("ks must be non-empty")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["version"] = CONFIG_VERSION
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        version = doc.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version!r}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        kwargs = {}
        for name, sub in (("gen", GenConfig), ("net", NetConfig),
                          ("pretrain", Hyper), ("finetune", Hyper)):
            if name in doc:
                overrides = dict(doc.pop(name))
                sub_known = {f.name for f in dataclasses.fields(sub)}
                sub_unknown = set(overrides) - sub_known
                if sub_unknown:
                    raise ValueError(f"unknown {name} keys {sorted(sub_unknown)}")
                for key in ("backbone_widths", "decay_milestones"):
                    if key in overrides:
                        overrides[key] = tuple(overrides[key])
                kwargs[name] = replace(defaults[name], **overrides)
        for key in ("ks", "taps"):
            if key in doc and doc[key] is not None:
                doc[key] = tuple(doc[key])
        kwargs.update(doc)
        return cls(**kwargs)


def resolve_seeds(cfg: ExperimentConfig) -> ExperimentConfig:
    """Expand the master seed into the per-stage seeds; a None master keeps
    the stage seeds exactly as configured."""
    if cfg.seed is None:
        return cfg
    return replace(
        cfg,
        gen=replace(cfg.gen, seed=derive_seed(cfg.seed, "data")),
        pretrain=replace(cfg.pretrain, seed=derive_seed(cfg.seed, "pretrain")),
        finetune=replace(cfg.finetune, seed=derive_seed(cfg.seed, "finetune")),
    )


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical (sorted-key) JSON of the resolved config."""
    doc = resolve_seeds(cfg).to_dict()
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    seeds: dict
    artifacts: list = field(default_factory=list)

    def to_json_str(self) -> str:
        doc = {
            "format": "metriclens-manifest",
            "version": 1,
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "artifacts": sorted(self.artifacts, key=lambda a: a["path"]),
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _sweep_hook(ds, taps, target_dim):
    def hook(iteration, net, params):
        report = layer_sweep(net, params, ds, taps, target_dim, ks=(1,))
        return {
            f"r1_{layer}_{split}": value
            for (layer, split, _), value in report.scores.items()
        }
    return hook


@dataclass
class _Run:
    tag: str
    net: NetSpec
    loss: str


def _classification_net(cfg: ExperimentConfig, ds: Dataset) -> NetSpec:
    base = build_variant("A", cfg.net)
    return with_classifier(base, ds.class_count("train"))


def _plan_runs(cfg: ExperimentConfig, ds: Dataset) -> list:
    exp = cfg.experiment
    if exp == "fig2-sweep":
        return [_Run("netA", build_variant("A", cfg.net), cfg.loss)]
    if exp == "fig3-losscmp":
        return [
            _Run("triplet", build_variant("A", cfg.net), "triplet"),
            _Run("classification", _classification_net(cfg, ds), "classification"),
        ]
    if exp == "fig4-pretrain":
        return [_Run(f"net{v}", build_variant(v, cfg.net), cfg.loss) for v in "ABC"]
    if exp == "fig5-losspos":
        return [_Run(f"net{v}", build_variant(v, cfg.net), cfg.loss) for v in "ADEF"]
    if exp == "fig7-dims":
        half = replace(cfg.net, embed_dim=max(1, cfg.net.embed_dim // 2))
        return [
            _Run(f"embed{cfg.net.embed_dim}", build_variant("A", cfg.net), cfg.loss),
            _Run(f"embed{half.embed_dim}", build_variant("A", half), cfg.loss),
        ]
    if exp == "fig8-scale":
        return [_Run(f"net{v}", build_variant(v, cfg.net), cfg.loss) for v in "AE"]
    raise ValueError(f"unknown experiment {exp!r}")


def _scaled_gen(gen: GenConfig) -> GenConfig:
    return replace(
        gen,
        source_classes=gen.source_classes * 2,
        train_classes=gen.train_classes * 2,
        test_classes=gen.test_classes * 2,
    )


def run_experiment(cfg: ExperimentConfig, out_dir) -> RunManifest:
    """Execute one canned experiment into out_dir.

    Emits dataset.csv, one report-<tag>.json/.csv plus history-<tag>.csv per
    run, and manifest.json. Reuses out_dir/dataset.csv when present.
    """
    cfg = resolve_seeds(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    seeds = {
        "master": cfg.seed,
        "data": cfg.gen.seed,
        "pretrain": cfg.pretrain.seed,
        "finetune": cfg.finetune.seed,
        "init": derive_seed(cfg.seed, "init")
        if cfg.seed is not None
        else derive_seed(cfg.finetune.seed, "init"),
    }

    gen = _scaled_gen(cfg.gen) if cfg.experiment == "fig8-scale" else cfg.gen
    ds_path = out / "dataset.csv"
    if ds_path.exists():
        ds = Dataset.load_csv(ds_path)
    else:
        ds = gen_synthetic(gen)
        ds.save_csv(ds_path)
    artifacts = ["dataset.csv"]

    runs = _plan_runs(cfg, ds)
    pretrained = None
    if any("pretrained" in r.net.init_provenance.values() for r in runs):
        pretrained = pretrain_classification(
            backbone_net(cfg.net), ds, cfg.pretrain, jitter_std=gen.jitter_std
        )
        pretrained.save(out / "pretrained-backbone.json")
        artifacts.append("pretrained-backbone.json")

    for run in runs:
        taps = cfg.taps if cfg.taps is not None else run.net.taps
        params = init_params(run.net, Rng(seeds["init"]), pretrained)
        hook = _sweep_hook(ds, taps, cfg.target_dim)
        params, history = train(
            run.net, params, ds, run.loss, cfg.finetune,
            split="train", eval_hooks=(hook,), jitter_std=gen.jitter_std,
            snapshot_count=cfg.snapshot_count,
        )
        report = layer_sweep(run.net, params, ds, taps, cfg.target_dim, ks=cfg.ks)
        report.meta = {
            "config_hash": chash,
            "experiment": cfg.experiment,
            "tag": run.tag,
            "loss": run.loss,
            "seeds": seeds,
            "tool_version": __version__,
        }
        report.save_json(out / f"report-{run.tag}.json")
        report.save_csv(out / f"report-{run.tag}.csv")
        history.to_csv(out / f"history-{run.tag}.csv")
        artifacts += [f"report-{run.tag}.json", f"report-{run.tag}.csv", f"history-{run.tag}.csv"]

    manifest = RunManifest(
        config_hash=chash,
        tool_version=__version__,
        seeds=seeds,
        artifacts=[{"path": p, "sha256": _sha256(out / p)} for p in artifacts],
    )
    (out / "manifest.json").write_text(manifest.to_json_str())
    return manifest
