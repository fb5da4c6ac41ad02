import json

import numpy as np
import pytest

from checkpoint import load_checkpoint, save_checkpoint, sidecar_path
from errors import FormatError
from model import BaseInput, Beta, FusionSpec, build_base, build_fused, predict
from train import TrainConfig, stack_arrays, train_model


@pytest.fixture
def trained(tiny_base, toy_samples):
    model = build_fused(FusionSpec(1, Beta.CONCAT, tiny_base), seed=2)
    cfg = TrainConfig(batch_size=2, iterations=3, augment=False)
    return train_model(model, toy_samples, cfg).model


class TestCheckpoint:
    def test_round_trip_preserves_predictions(self, tmp_path, trained, toy_samples):
        masks, images, _ = stack_arrays(toy_samples)
        before = predict(trained, masks, images)
        path = save_checkpoint(trained, tmp_path / "model.ckpt")
        loaded = load_checkpoint(path)
        assert not loaded.training
        assert loaded.name == trained.name
        np.testing.assert_array_equal(predict(loaded, masks, images), before)

    def test_running_stats_are_saved(self, tmp_path, trained):
        loaded = load_checkpoint(save_checkpoint(trained, tmp_path / "model.ckpt"))
        for name, value in trained.buffers().items():
            np.testing.assert_array_equal(loaded.buffers()[name], value)

    def test_sidecar_describes_architecture(self, tmp_path, trained):
        path = save_checkpoint(trained, tmp_path / "model.ckpt")
        meta = json.loads(sidecar_path(path).read_text())
        assert meta["kind"] == "fused"
        assert meta["spec"]["alpha"] == 1
        assert meta["spec"]["beta"] == "concat"

    def test_saving_is_byte_deterministic(self, tmp_path, trained):
        a = save_checkpoint(trained, tmp_path / "a.ckpt")
        b = save_checkpoint(trained, tmp_path / "b.ckpt")
        assert a.read_bytes() == b.read_bytes()

    def test_base_model_round_trip(self, tmp_path, tiny_base):
        model = build_base(tiny_base, 2, BaseInput.EARLY, seed=4)
        loaded = load_checkpoint(save_checkpoint(model, tmp_path / "early.ckpt"))
        assert loaded.source is BaseInput.EARLY
        assert loaded.num_parameters() == model.num_parameters()

    def test_architecture_mismatch(self, tmp_path, tiny_base):
        path = save_checkpoint(build_fused(FusionSpec(1, Beta.CONCAT, tiny_base)), tmp_path / "m.ckpt")
        other = save_checkpoint(build_fused(FusionSpec(1, Beta.ADD, tiny_base)), tmp_path / "other.ckpt")
        sidecar_path(path).write_text(sidecar_path(other).read_text())
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path, trained):
        path = save_checkpoint(trained, tmp_path / "m.ckpt")
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path, trained):
        path = save_checkpoint(trained, tmp_path / "m.ckpt")
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_bad_sidecar(self, tmp_path, trained):
        path = save_checkpoint(trained, tmp_path / "m.ckpt")
        sidecar_path(path).write_text("{not json")
        with pytest.raises(FormatError):
            load_checkpoint(path)
