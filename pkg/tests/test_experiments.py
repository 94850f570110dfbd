import json

import numpy as np
import pytest

from metriclens.cli import main
from metriclens.data import Dataset
from metriclens.evaluation import MetricReport
from metriclens.experiments import (
    EXPERIMENT_IDS,
    ExperimentConfig,
    config_hash,
    resolve_seeds,
    run_experiment,
)

TINY = {
    "version": 1,
    "gen": {
        "ambient_dim": 8,
        "source_classes": 3,
        "train_classes": 3,
        "test_classes": 3,
        "items_per_class": 4,
        "nuisance_dim": 2,
        "class_nuisance_dim": 2,
    },
    "net": {"in_dim": 8, "backbone_widths": (8, 8, 8), "embed_dim": 8},
    "pretrain": {"iterations": 20, "p": 2, "k": 2},
    "finetune": {"iterations": 30, "p": 2, "k": 2},
    "ks": [1, 2],
    "snapshot_count": 3,
    "seed": 0,
}


def tiny_config(**overrides) -> ExperimentConfig:
    doc = json.loads(json.dumps(TINY))
    doc.update(overrides)
    return ExperimentConfig.from_dict(doc)


def read_all_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestConfig:
    def test_round_trip(self):
        cfg = tiny_config(experiment="fig5-losspos")
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            tiny_config(bogus=1)

    def test_unknown_sub_key_rejected(self):
        doc = json.loads(json.dumps(TINY))
        doc["gen"]["bogus"] = 1
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict(doc)

    def test_unknown_experiment_rejected(self):
        with pytest.raises(ValueError):
            tiny_config(experiment="fig9-unknown")

    def test_hash_ignores_key_order(self):
        doc = json.loads(json.dumps(TINY))
        reordered = {k: doc[k] for k in reversed(list(doc))}
        assert config_hash(ExperimentConfig.from_dict(doc)) == config_hash(
            ExperimentConfig.from_dict(reordered)
        )

    def test_hash_tracks_semantic_change(self):
        a = tiny_config()
        b = tiny_config(seed=1)
        assert config_hash(a) != config_hash(b)

    def test_seed_resolution_is_stable(self):
        a = resolve_seeds(tiny_config())
        b = resolve_seeds(tiny_config())
        assert a.gen.seed == b.gen.seed
        assert a.pretrain.seed != a.finetune.seed


class TestRunExperiment:
    def test_fig5_emits_one_report_per_variant(self, tmp_path):
        manifest = run_experiment(tiny_config(experiment="fig5-losspos"), tmp_path)
        names = {a["path"] for a in manifest.artifacts}
        for tag in ("netA", "netD", "netE", "netF"):
            assert f"report-{tag}.json" in names
            assert f"history-{tag}.csv" in names
        assert (tmp_path / "manifest.json").exists()

    def test_fig2_report_covers_all_taps_and_splits(self, tmp_path):
        run_experiment(tiny_config(experiment="fig2-sweep"), tmp_path)
        report = MetricReport.from_json(tmp_path / "report-netA.json")
        layers = {key[0] for key in report.scores}
        assert layers == {"backbone1_bn", "backbone2_bn", "backbone3_bn", "embed1"}
        for key in report.scores:
            assert key[1] in ("train", "test")

    def test_fig3_emits_both_losses(self, tmp_path):
        run_experiment(tiny_config(experiment="fig3-losscmp"), tmp_path)
        assert (tmp_path / "report-triplet.json").exists()
        assert (tmp_path / "report-classification.json").exists()

    def test_fig7_halves_embedding(self, tmp_path):
        run_experiment(tiny_config(experiment="fig7-dims"), tmp_path)
        assert (tmp_path / "report-embed8.json").exists()
        assert (tmp_path / "report-embed4.json").exists()

    def test_fig8_doubles_the_class_counts(self, tmp_path):
        run_experiment(tiny_config(experiment="fig8-scale"), tmp_path)
        ds = Dataset.load_csv(tmp_path / "dataset.csv")
        assert ds.class_count("train") == 6  # tiny config has 3
        assert (tmp_path / "report-netA.json").exists()
        assert (tmp_path / "report-netE.json").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = tiny_config(experiment="fig4-pretrain")
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        a = read_all_bytes(tmp_path / "a")
        b = read_all_bytes(tmp_path / "b")
        assert set(a) == set(b)
        for name in a:
            assert a[name] == b[name], name

    def test_existing_dataset_reused(self, tmp_path):
        cfg = tiny_config()
        run_experiment(cfg, tmp_path)
        stamp = (tmp_path / "dataset.csv").read_bytes()
        run_experiment(cfg, tmp_path)
        assert (tmp_path / "dataset.csv").read_bytes() == stamp

    def test_manifest_hashes_artifacts(self, tmp_path):
        import hashlib

        manifest = run_experiment(tiny_config(), tmp_path)
        for entry in manifest.artifacts:
            digest = hashlib.sha256((tmp_path / entry["path"]).read_bytes()).hexdigest()
            assert digest == entry["sha256"]

    def test_history_has_snapshot_columns(self, tmp_path):
        run_experiment(tiny_config(), tmp_path)
        header = (tmp_path / "history-netA.csv").read_text().splitlines()[0]
        assert "r1_embed1_test" in header
        assert "r1_backbone3_bn_train" in header

    def test_taps_override_restricts_report(self, tmp_path):
        run_experiment(tiny_config(taps=["backbone3_bn"]), tmp_path)
        report = MetricReport.from_json(tmp_path / "report-netA.json")
        assert {key[0] for key in report.scores} == {"backbone3_bn"}

    def test_saved_backbone_store_seeds_a_variant(self, tmp_path):
        from metriclens.network import ParamStore, build_variant, init_params
        from metriclens.numerics import Rng

        cfg = tiny_config()
        run_experiment(cfg, tmp_path)
        store = ParamStore.load(tmp_path / "pretrained-backbone.json")
        net = build_variant("A", cfg.net)
        params = init_params(net, Rng(0), store)
        for key, arr in store.tensors["backbone2_dense"].items():
            assert np.array_equal(params.tensors["backbone2_dense"][key], arr)


class TestCli:
    def write_config(self, tmp_path, doc=None):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc if doc is not None else TINY))
        return path

    def test_gen_data_idempotent(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out1, out2 = tmp_path / "d1", tmp_path / "d2"
        assert main(["gen-data", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["gen-data", "--config", str(cfg), "--out", str(out2)]) == 0
        assert (out1 / "dataset.csv").read_bytes() == (out2 / "dataset.csv").read_bytes()
        ds = Dataset.load_csv(out1 / "dataset.csv")
        assert ds.features.shape[0] == 9 * 4  # classes x items across the splits

    def test_run_and_plot(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "run"
        assert main(["run", "fig2-sweep", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["plot", str(out / "history-netA.csv")]) == 0
        svg = (out / "history-netA.svg").read_text()
        assert svg.startswith("<svg")
        # one polyline per tap x split, y axis spanning [0, 1]
        assert svg.count("<polyline") == 4 * 2
        assert ">0.00</text>" in svg and ">1.00</text>" in svg

    def test_plot_without_snapshots_fails(self, tmp_path, capsys):
        csv_path = tmp_path / "history.csv"
        csv_path.write_text("iteration,loss,lr\n0,1.0,0.01\n")
        assert main(["plot", str(csv_path)]) == 1
        err = capsys.readouterr().err
        assert json.loads(err.strip())["error"]

    def test_malformed_config_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n  "version": 1,\n  "oops\n}\n')
        assert main(["run", "fig2-sweep", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
        message = json.loads(capsys.readouterr().err.strip())["message"]
        assert "line 3" in message

    def test_seed_flag_overrides_config(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out1, out2 = tmp_path / "s0", tmp_path / "s1"
        main(["gen-data", "--config", str(cfg), "--out", str(out1)])
        main(["gen-data", "--config", str(cfg), "--seed", "1", "--out", str(out2)])
        assert (out1 / "dataset.csv").read_bytes() != (out2 / "dataset.csv").read_bytes()

    def test_sweep_runs_cartesian(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "sweep"
        code = main([
            "sweep", "fig2-sweep", "--config", str(cfg),
            "--vary", "seed=0,1", "--vary", "finetune.iterations=10,20",
            "--out", str(out),
        ])
        assert code == 0
        combos = sorted(p.name for p in out.iterdir())
        assert len(combos) == 4
        for combo in combos:
            assert (out / combo / "manifest.json").exists()

    def test_sweep_requires_vary(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        assert main(["sweep", "fig2-sweep", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1

    def test_unwritable_out_path_fails_cleanly(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        out = blocker / "nested"  # parent is a file, mkdir must fail
        assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 1
        assert json.loads(capsys.readouterr().err.strip())["error"]

    def test_plot_deterministic(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "run"
        main(["run", "fig2-sweep", "--config", str(cfg), "--out", str(out)])
        main(["plot", str(out / "history-netA.csv"), "--out", str(tmp_path / "p1")])
        main(["plot", str(out / "history-netA.csv"), "--out", str(tmp_path / "p2")])
        a = (tmp_path / "p1" / "history-netA.svg").read_bytes()
        b = (tmp_path / "p2" / "history-netA.svg").read_bytes()
        assert a == b
