"""Command-line entry point: gen-data, run, plot, sweep."""

import argparse
import itertools
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from .data import gen_synthetic
from .experiments import EXPERIMENT_IDS, ExperimentConfig, resolve_seeds, run_experiment
from .plotting import plot_history


class CliError(Exception):
    pass


def _load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"config parse error at line {exc.lineno}: {exc.msg}") from exc
    try:
        return ExperimentConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad config: {exc}") from exc


def _apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _cmd_gen_data(args) -> int:
    cfg = _apply_flags(_load_config(args.config), args)
    cfg = resolve_seeds(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = gen_synthetic(cfg.gen)
    path = out / "dataset.csv"
    ds.save_csv(path)
    print(path)
    return 0


def _cmd_run(args) -> int:
    cfg = _apply_flags(_load_config(args.config), args)
    try:
        cfg = replace(cfg, experiment=args.experiment)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    start = time.monotonic()
    manifest = run_experiment(cfg, args.out)
    elapsed = time.monotonic() - start
    print(f"wrote {len(manifest.artifacts)} artifacts to {args.out}", file=sys.stderr)
    print(f"wall clock: {elapsed:.2f}s", file=sys.stderr)
    print(Path(args.out) / "manifest.json")
    return 0


def _cmd_plot(args) -> int:
    for src in args.files:
        src = Path(src)
        if not src.exists():
            raise CliError(f"no such file: {src}")
        dest = (Path(args.out) if args.out else src.parent) / (src.stem + ".svg")
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
        try:
            plot_history(src, dest)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
        print(dest)
    return 0


def _parse_vary(specs):
    fields = []
    for spec in specs:
        if "=" not in spec:
            raise CliError(f"--vary needs field=v1,v2 (got {spec!r})")
        path, raw = spec.split("=", 1)
        values = []
        for token in raw.split(","):
            try:
                values.append(json.loads(token))
            except json.JSONDecodeError:
                values.append(token)
        fields.append((path.strip(), values))
    return fields


def _set_path(doc: dict, path: str, value):
    keys = path.split(".")
    node = doc
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise CliError(f"cannot descend into {path!r}")
    node[keys[-1]] = value


def _cmd_sweep(args) -> int:
    base = _apply_flags(_load_config(args.config), args)
    base = replace(base, experiment=args.experiment)
    fields = _parse_vary(args.vary or [])
    if not fields:
        raise CliError("sweep needs at least one --vary field")
    names = [f[0] for f in fields]
    for combo in itertools.product(*(f[1] for f in fields)):
        doc = base.to_dict()
        for path, value in zip(names, combo):
            _set_path(doc, path, value)
        cfg = ExperimentConfig.from_dict(doc)
        slug = "__".join(
            f"{p.replace('.', '-')}={v}" for p, v in zip(names, combo)
        ).replace("/", "-")
        run_experiment(cfg, Path(args.out) / slug)
        print(Path(args.out) / slug / "manifest.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metriclens",
        description="Layer-wise generalization workbench for embedding retrieval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the dataset CSV for a config")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("run", help="run a canned experiment")
    p.add_argument("experiment", choices=EXPERIMENT_IDS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("plot", help="render history CSVs to SVG")
    p.add_argument("files", nargs="+")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_plot)

    p = sub.add_parser("sweep", help="cartesian sweep over config fields")
    p.add_argument("experiment", choices=EXPERIMENT_IDS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--vary", action="append", metavar="FIELD=V1,V2")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(json.dumps({"error": "cli", "message": str(exc)}), file=sys.stderr)
        return 1
    except Exception as exc:  # any failure still exits with one parseable line
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
