"""
End-to-end runs of the command line on tiny synthetic data.
"""

import json
import logging
from pathlib import Path

import pytest

from main import main
from model import BaseConfig, enumerate_space
from run_storage import load_manifest

SMOKE = Path(__file__).resolve().parents[2] / "configs" / "smoke.json"


@pytest.fixture(autouse=True)
def _restore_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    code = main(["gen-data", "--side", "16", "--n-normal", "4", "--n-abnormal", "4", "--seed", "1", "--out", str(out)])
    assert code == 0
    return out / "manifest.csv"


@pytest.fixture
def quick_config(tmp_path):
    data = json.loads(SMOKE.read_text())
    data["train"]["iterations"] = 3
    path = tmp_path / "quick.json"
    path.write_text(json.dumps(data))
    return path


def write_scores(path, rows):
    path.write_text("case_id,p,z\n" + "".join(f"{c},{p},{z}\n" for c, p, z in rows))
    return path


class TestUsage:
    def test_no_arguments(self):
        assert main([]) == 1

    def test_unknown_flag(self):
        assert main(["analyze", "--bogus"]) == 1

    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert "fusegrid" in capsys.readouterr().out

    def test_show_config(self, capsys):
        assert main(["--show-config"]) == 0
        assert "Configuration" in capsys.readouterr().out

    def test_missing_input_file(self, tmp_path):
        assert main(["eval", "--scores", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "out")]) == 2

    def test_invalid_arguments(self, tmp_path):
        assert main(["analyze", "--alpha", "9", "--beta", "add"]) == 1
        assert main(["analyze", "--all", "--alpha", "1", "--beta", "add"]) == 1

    def test_corrupt_config(self, tmp_path, dataset):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert main(["train", "--config", str(bad), "--data", str(dataset), "--base", "mask", "--out", str(tmp_path / "t")]) == 2

    @pytest.mark.parametrize(
        "data",
        [{"train": {"iterations": "5"}}, {"cv": {"folds": "4"}}, {"preprocess": {"pad": None}}, {"base": {"channels": "wide"}}],
    )
    def test_wrongly_typed_config(self, tmp_path, data):
        path = tmp_path / "typed.json"
        path.write_text(json.dumps(data))
        assert main(["analyze", "--all", "--config", str(path)]) == 1

    def test_wrongly_typed_gen_config(self, tmp_path):
        path = tmp_path / "gen.json"
        path.write_text(json.dumps({"side": "16"}))
        assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "d")]) == 1

    def test_show_config_with_bad_environment(self, monkeypatch):
        monkeypatch.setenv("FUSEGRID_SEED", "abc")
        assert main(["--show-config"]) == 1

    def test_out_defaults_to_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FUSEGRID_OUT_DIR", str(tmp_path / "runs"))
        scores = write_scores(tmp_path / "s.csv", [("a", 0.9, 1), ("b", 0.2, 0)])
        assert main(["eval", "--scores", str(scores)]) == 0
        assert (tmp_path / "runs" / "eval" / "report.json").exists()


class TestAnalyze:
    def test_all_specs(self, capsys, tmp_path):
        assert main(["analyze", "--all", "--out", str(tmp_path / "costs")]) == 0
        out = capsys.readouterr().out
        for spec in enumerate_space(BaseConfig()):
            assert spec.name in out
        costs = json.loads((tmp_path / "costs" / "costs.json").read_text())
        assert len(costs) == 18

    def test_single_spec(self, capsys):
        assert main(["analyze", "--alpha", "3", "--beta", "mul"]) == 0
        assert "FusionNet3*" in capsys.readouterr().out


class TestDataAndTraining:
    def test_gen_data_writes_manifest(self, dataset):
        manifest = load_manifest(dataset.parent / "run_manifest.json")
        assert manifest.command == "gen-data"
        assert manifest.seed == 1
        assert "manifest.csv" in manifest.outputs

    def test_preprocess(self, tmp_path, dataset):
        volumes = dataset.parent / "volumes"
        args = ["preprocess", "--image", str(volumes / "case0000_image.vol"), "--mask", str(volumes / "case0000_mask.vol")]
        assert main(args + ["--out-side", "8", "--pad", "2", "--out", str(tmp_path / "prep")]) == 0
        assert (tmp_path / "prep" / "image.vol").exists()
        assert (tmp_path / "prep" / "mask.vol").exists()

    def test_training_twice_gives_identical_checkpoints(self, tmp_path, dataset, quick_config):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            args = ["train", "--config", str(quick_config), "--data", str(dataset), "--alpha", "1", "--beta", "concat"]
            assert main(args + ["--out", str(out)]) == 0
            outs.append(out)
        assert (outs[0] / "model.ckpt").read_bytes() == (outs[1] / "model.ckpt").read_bytes()
        assert (outs[0] / "loss_trace.csv").read_text() == (outs[1] / "loss_trace.csv").read_text()

    def test_train_with_held_out_fold(self, tmp_path, dataset, quick_config):
        out = tmp_path / "held"
        args = ["train", "--config", str(quick_config), "--data", str(dataset), "--base", "image", "--folds-exclude", "0"]
        assert main(args + ["--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["n"] == 4
        assert (out / "scores" / "Image.csv").exists()

    def test_train_needs_a_model(self, tmp_path, dataset):
        assert main(["train", "--data", str(dataset), "--alpha", "1", "--out", str(tmp_path / "x")]) == 1


class TestEval:
    def test_single_scores(self, tmp_path, capsys):
        scores = write_scores(tmp_path / "s.csv", [("a", 0.9, 1), ("b", 0.2, 0), ("c", 0.6, 0), ("d", 0.4, 1)])
        assert main(["eval", "--scores", str(scores), "--out", str(tmp_path / "ev")]) == 0
        report = json.loads((tmp_path / "ev" / "report.json").read_text())
        assert report["auc"] == 0.75
        assert (tmp_path / "ev" / "roc.csv").exists()

    def test_pair_mode(self, tmp_path, capsys):
        mask = write_scores(tmp_path / "m.csv", [("a", 0.9, 1), ("b", 0.2, 0), ("c", 0.3, 1)])
        image = write_scores(tmp_path / "i.csv", [("a", 0.4, 1), ("b", 0.1, 0), ("c", 0.8, 1)])
        assert main(["eval", "--mask-scores", str(mask), "--image-scores", str(image), "--out", str(tmp_path / "ev")]) == 0
        report = json.loads((tmp_path / "ev" / "report.json").read_text())
        assert report["Mask+Image GT"]["sen"] == 1.0
        assert report["Mask+Image GT"]["auc"] is None
        assert "Naive Fusion" in capsys.readouterr().out

    def test_pair_mode_id_mismatch(self, tmp_path):
        mask = write_scores(tmp_path / "m.csv", [("a", 0.9, 1), ("b", 0.2, 0)])
        image = write_scores(tmp_path / "i.csv", [("a", 0.4, 1), ("z", 0.1, 0)])
        assert main(["eval", "--mask-scores", str(mask), "--image-scores", str(image), "--out", str(tmp_path / "ev")]) == 1


class TestSearch:
    def test_tiny_search(self, tmp_path, dataset, quick_config, capsys):
        out = tmp_path / "search"
        assert main(["search", "--config", str(quick_config), "--data", str(dataset), "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "🏆 winner:" in printed
        leaderboard = (out / "leaderboard.csv").read_text().splitlines()
        assert len(leaderboard) == 1 + 6
        reports = json.loads((out / "reports.json").read_text())
        assert reports["winner"] == reports["leaderboard"][0]["name"]
        assert set(reports["baselines"]) == {"Mask", "Image", "Naive Fusion", "Mask+Image GT"}
        assert set(reports["baseline_params"]) == {"Mask", "Image"}
        assert reports["baseline_params"]["Mask"] > 0
        assert (out / "claims.json").exists()
        assert (out / "scores" / "Mask.csv").exists()
        assert (out / "roc" / "FusionNet1_add.csv").exists()
        assert "leaderboard.csv" in load_manifest(out / "run_manifest.json").outputs
