import numpy as np
import pytest

from errors import FormatError
from preprocess import Volume, VolumeKind
from volume_io import HEADER, MAGIC, decode_volume, encode_volume, read_volume, write_volume


@pytest.fixture
def image(rng):
    return Volume(rng.normal(size=(3, 4, 5)), spacing=(2.5, 0.7, 0.7))


class TestVolumeFiles:
    def test_file_round_trip(self, tmp_path, image):
        path = write_volume(tmp_path / "nested" / "ct.vol", image)
        loaded = read_volume(path)
        np.testing.assert_array_equal(loaded.data, image.data)
        assert loaded.dims == (3, 4, 5)
        assert loaded.spacing == pytest.approx(image.spacing)
        assert loaded.kind is VolumeKind.IMAGE

    def test_header_layout(self, image):
        blob = encode_volume(image)
        assert blob[:4] == MAGIC
        assert len(blob) == HEADER.size + 4 * 3 * 4 * 5
        assert HEADER.size == 4 + 1 + 12 + 12

    def test_mask_kind_is_kept(self):
        mask = Volume(np.eye(4)[None].repeat(2, axis=0), kind=VolumeKind.MASK)
        assert decode_volume(encode_volume(mask)).kind is VolumeKind.MASK

    def test_truncated_header(self):
        with pytest.raises(FormatError):
            decode_volume(b"VOL1\x00")

    def test_bad_magic(self, image):
        blob = encode_volume(image)
        with pytest.raises(FormatError):
            decode_volume(b"XXXX" + blob[4:])

    def test_size_mismatch(self, image):
        with pytest.raises(FormatError):
            decode_volume(encode_volume(image)[:-4])

    def test_unknown_kind(self, image):
        blob = bytearray(encode_volume(image))
        blob[4] = 7
        with pytest.raises(FormatError):
            decode_volume(bytes(blob))

    def test_non_binary_mask_payload(self, image):
        blob = bytearray(encode_volume(image))
        blob[4] = int(VolumeKind.MASK)
        with pytest.raises(FormatError):
            decode_volume(bytes(blob))

    def test_missing_file_is_os_error(self, tmp_path):
        with pytest.raises(OSError):
            read_volume(tmp_path / "nope.vol")
