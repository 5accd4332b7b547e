"""Command-line pipeline: exit codes, file flows, report bundling."""

import json

import numpy as np
import pytest

from pulseaudit.cli import main


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    code = run(["synth", "--task", "hr", "--patients", "4", "--records", "2",
                "--duration", "80", "--seed", "7", "--out", str(d), "--quiet"])
    assert code == 0
    return d


@pytest.fixture(scope="module")
def random_data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli_rnd") / "data"
    code = run(["synth", "--task", "random", "--patients", "4", "--records", "2",
                "--duration", "80", "--seed", "7", "--out", str(d), "--quiet"])
    assert code == 0
    return d


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert run(["synth", "--no-such-flag"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand(self):
        assert run(["frobnicate"]) == 1

    def test_zero_entropy_target_is_data_error(self, tmp_path, capsys):
        f = tmp_path / "features.csv"
        f.write_text("patient_id,record_id,window_start,hr,sbp\n"
                     + "".join(f"p,r,{i},{60 + i},120.0\n" for i in range(200)))
        code = run(["mi", "--in", str(f), "--features", "hr", "--target", "sbp",
                    "--out", str(tmp_path / "mi.json")])
        assert code == 2
        assert "zero-entropy" in capsys.readouterr().err

    def test_refuses_overwrite_without_force(self, data_dir, tmp_path):
        out = tmp_path / "mvm.json"
        argv = ["mvm", "--data", str(data_dir), "--label", "hr", "--to", "8",
                "--out", str(out), "--quiet"]
        assert run(argv) == 0
        assert run(argv) == 2
        assert run(argv + ["--force"]) == 0


class TestMvmPipeline:
    def test_synth_then_mvm_smoke(self, data_dir, tmp_path):
        out = tmp_path / "mvm.json"
        code = run(["mvm", "--data", str(data_dir), "--label", "hr",
                    "--to", "8", "--out", str(out), "--quiet"])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["schema"] == 1
        assert "match_rate" in payload["mvm"]
        assert payload["mvm"]["threshold_calibration"]["threshold"] > 0

    def test_deterministic_report_bytes(self, data_dir, tmp_path):
        argv = lambda name: ["mvm", "--data", str(data_dir), "--label", "hr",
                             "--to", "8", "--out", str(tmp_path / name), "--quiet"]
        assert run(argv("a.json")) == 0
        assert run(argv("b.json")) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


class TestPreprocessFeaturesMi:
    def test_full_feature_path(self, random_data_dir, tmp_path):
        win = tmp_path / "win.npz"
        assert run(["preprocess", "--data", str(random_data_dir), "--length", "10",
                    "--stride", "5", "--out", str(win), "--quiet"]) == 0
        feats = tmp_path / "features.csv"
        assert run(["features", "--windows", str(win), "--out", str(feats),
                    "--quiet"]) == 0
        header = feats.read_text().splitlines()[0].split(",")
        assert {"patient_id", "record_id", "window_start", "hr", "sbp"} <= set(header)
        out = tmp_path / "mi.json"
        code = run(["mi", "--in", str(feats), "--features", "hr,quality",
                    "--target", "sbp", "--bins", "8", "--bootstrap", "0.5,1.0",
                    "--runs", "3", "--out", str(out), "--quiet"])
        assert code == 0
        payload = json.loads(out.read_text())["mi"]
        assert set(payload["per_feature_mi_bits"]) == {"hr", "quality"}
        assert len(payload["bootstrap"]["points"]) == 2

    def test_autoencoder_train_encode(self, random_data_dir, tmp_path):
        win = tmp_path / "win.npz"
        assert run(["preprocess", "--data", str(random_data_dir), "--length", "2",
                    "--stride", "2", "--out", str(win), "--quiet"]) == 0
        model = tmp_path / "model.bin"
        assert run(["autoencoder", "train", "--in", str(win), "--bottleneck", "4",
                    "--hidden", "16", "--epochs", "3", "--seed", "5",
                    "--out", str(model), "--quiet"]) == 0
        codes = tmp_path / "codes.csv"
        assert run(["autoencoder", "encode", "--model", str(model), "--in",
                    str(win), "--out", str(codes), "--quiet"]) == 0
        header = codes.read_text().splitlines()[0].split(",")
        assert {"c0", "c1", "c2", "c3", "sbp"} <= set(header)
        # codes are MI-ready: run the mi stage on them
        out = tmp_path / "mi_codes.json"
        assert run(["mi", "--in", str(codes), "--features", "c0,c1,c2,c3",
                    "--target", "sbp", "--bins", "8", "--out", str(out),
                    "--quiet"]) == 0

    def test_autoencoder_deterministic_model_file(self, random_data_dir, tmp_path):
        win = tmp_path / "win.npz"
        assert run(["preprocess", "--data", str(random_data_dir), "--length", "2",
                    "--stride", "2", "--out", str(win), "--quiet"]) == 0
        args = lambda name: ["autoencoder", "train", "--in", str(win),
                             "--bottleneck", "4", "--hidden", "16", "--epochs", "2",
                             "--seed", "5", "--out", str(tmp_path / name), "--quiet"]
        assert run(args("m1.bin")) == 0
        assert run(args("m2.bin")) == 0
        assert (tmp_path / "m1.bin").read_bytes() == (tmp_path / "m2.bin").read_bytes()


class TestSplitCalib:
    def test_split_make_audit_calib(self, random_data_dir, tmp_path):
        split = tmp_path / "split.csv"
        assert run(["split", "make", "--data", str(random_data_dir), "--scheme",
                    "dataoverlap", "--length", "10", "--stride", "5",
                    "--seed", "3", "--out", str(split), "--quiet"]) == 0
        leak = tmp_path / "leakage.json"
        assert run(["split", "audit", "--split", str(split), "--manifest",
                    str(random_data_dir / "manifest.json"),
                    "--out", str(leak), "--quiet"]) == 0
        verdicts = json.loads(leak.read_text())["leakage"]["verdicts"]
        assert verdicts["data_overlap"] == "contaminated"
        ev = tmp_path / "eval.json"
        assert run(["calib", "--data", str(random_data_dir), "--split", str(split),
                    "--method", "naive", "--label", "sbp", "--out", str(ev),
                    "--quiet"]) == 0
        payload = json.loads(ev.read_text())["calib"]
        assert {"eval", "aami", "bhs", "drift"} <= set(payload)

    def test_split_deterministic(self, random_data_dir, tmp_path):
        args = lambda name: ["split", "make", "--data", str(random_data_dir),
                             "--scheme", "nooverlap", "--seed", "9",
                             "--out", str(tmp_path / name), "--quiet"]
        assert run(args("s1.csv")) == 0
        assert run(args("s2.csv")) == 0
        assert (tmp_path / "s1.csv").read_bytes() == (tmp_path / "s2.csv").read_bytes()


class TestReport:
    def test_bundle_with_only_mvm(self, data_dir, tmp_path):
        mvm_out = tmp_path / "mvm.json"
        assert run(["mvm", "--data", str(data_dir), "--label", "hr", "--to", "8",
                    "--out", str(mvm_out), "--quiet"]) == 0
        bundle = tmp_path / "report.json"
        assert run(["report", "--mvm", str(mvm_out), "--out", str(bundle),
                    "--csv-dir", str(tmp_path), "--quiet"]) == 0
        payload = json.loads(bundle.read_text())
        assert payload["mvm"] is not None
        assert payload["mi"] is None and payload["calib"] is None
        assert (tmp_path / "threshold_histogram.csv").exists()

    def test_missing_artifact_is_error(self, tmp_path, capsys):
        code = run(["report", "--mvm", str(tmp_path / "nope.json"),
                    "--out", str(tmp_path / "report.json")])
        assert code == 2
        assert "missing artifact" in capsys.readouterr().err

    def test_bootstrap_csv_row_count(self, random_data_dir, tmp_path):
        """Bootstrap CSV rows = fractions x runs."""
        win = tmp_path / "win.npz"
        assert run(["preprocess", "--data", str(random_data_dir), "--length", "10",
                    "--stride", "5", "--out", str(win), "--quiet"]) == 0
        feats = tmp_path / "features.csv"
        assert run(["features", "--windows", str(win), "--out", str(feats),
                    "--quiet"]) == 0
        mi_out = tmp_path / "mi.json"
        assert run(["mi", "--in", str(feats), "--features", "hr", "--target",
                    "sbp", "--bins", "8", "--bootstrap", "0.5,1.0", "--runs", "4",
                    "--out", str(mi_out), "--quiet"]) == 0
        bundle = tmp_path / "report.json"
        assert run(["report", "--mi", str(mi_out), "--out", str(bundle),
                    "--csv-dir", str(tmp_path), "--quiet"]) == 0
        rows = (tmp_path / "bootstrap_mi.csv").read_text().splitlines()
        assert len(rows) - 1 == 2 * 4

    def test_meta_sidecar_excluded_from_determinism(self, data_dir, tmp_path):
        mvm_out = tmp_path / "m.json"
        assert run(["mvm", "--data", str(data_dir), "--label", "hr", "--to", "8",
                    "--out", str(mvm_out), "--quiet"]) == 0
        assert (tmp_path / "m.json.meta.json").exists()
        meta = json.loads((tmp_path / "m.json.meta.json").read_text())
        assert "written_at" in meta
        assert "written_at" not in json.loads(mvm_out.read_text())
