import json

import pytest

from config import Config, default_run_config, load_run_config, RunConfig
from errors import ConfigError, FormatError


class TestEnvConfig:
    def test_defaults(self):
        cfg = Config()
        assert cfg.SEED == 0
        assert cfg.JOBS == 1
        assert cfg.WRITE_MANIFEST is True
        Config.validate(cfg)

    def test_reads_environment(self, monkeypatch):
        monkeypatch.setenv("FUSEGRID_SEED", "17")
        monkeypatch.setenv("FUSEGRID_JOBS", "3")
        monkeypatch.setenv("FUSEGRID_WRITE_MANIFEST", "no")
        monkeypatch.setenv("FUSEGRID_LOG_LEVEL", "debug")
        cfg = Config()
        assert (cfg.SEED, cfg.JOBS, cfg.WRITE_MANIFEST, cfg.LOG_LEVEL) == (17, 3, False, "DEBUG")

    def test_bad_integer(self, monkeypatch):
        monkeypatch.setenv("FUSEGRID_JOBS", "many")
        with pytest.raises(ConfigError):
            Config()

    @pytest.mark.parametrize("name,value", [("FUSEGRID_JOBS", "0"), ("FUSEGRID_LOG_LEVEL", "LOUD")])
    def test_validate(self, monkeypatch, name, value):
        monkeypatch.setenv(name, value)
        with pytest.raises(ConfigError):
            Config.validate(Config())

    def test_print_config(self, capsys):
        Config().print_config()
        assert "Seed: 0" in capsys.readouterr().out


class TestRunConfig:
    def test_defaults(self):
        run = default_run_config()
        assert run.base.input_side == 32
        assert run.train.lam == 0.7
        assert run.preprocess.pad == 20
        assert run.cv.folds == 4

    def test_seed_falls_back_to_environment(self, monkeypatch):
        monkeypatch.setenv("FUSEGRID_SEED", "5")
        assert default_run_config().train.seed == 5
        assert RunConfig.from_dict({"train": {"seed": 2}}).train.seed == 2

    def test_dict_round_trip(self):
        run = RunConfig.from_dict({"base": {"num_layers": 2, "channels": [4, 4], "input_side": 8}, "preprocess": {"pad": 4}})
        again = RunConfig.from_dict(json.loads(json.dumps(run.to_dict())))
        assert again == run

    @pytest.mark.parametrize(
        "data",
        [{"model": {}}, {"train": {"lambda": 0.5}}, {"cv": {"folds": 1}}, {"base": {"widths": [1]}}, {"train": {"lam": 1.5}}],
    )
    def test_rejects_bad_sections(self, data):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(data)

    @pytest.mark.parametrize(
        "data,field",
        [
            ({"train": {"iterations": "5"}}, "train.iterations"),
            ({"train": {"augment": 1}}, "train.augment"),
            ({"cv": {"folds": "4"}}, "cv.folds"),
            ({"preprocess": {"pad": None}}, "preprocess.pad"),
            ({"base": {"num_layers": 2, "channels": [4, "8"]}}, "base.channels"),
            ({"train": [1]}, "train"),
        ],
    )
    def test_rejects_wrong_types(self, data, field):
        with pytest.raises(ConfigError, match=field):
            RunConfig.from_dict(data)

    def test_integers_accepted_for_floats(self):
        run = RunConfig.from_dict({"train": {"lr0": 1}, "preprocess": {"lo_hu": -50}})
        assert run.train.lr0 == 1.0 and isinstance(run.train.lr0, float)
        assert run.preprocess.lo_hu == -50.0

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"train": {"iterations": 10}}))
        assert load_run_config(path).train.iterations == 10

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{")
        with pytest.raises(FormatError):
            load_run_config(path)

    def test_desk_config_loads(self):
        from pathlib import Path

        desk = Path(__file__).resolve().parents[2] / "configs" / "desk.json"
        run = load_run_config(desk)
        assert run.preprocess.pad == 4
