import json
import struct

import numpy as np
import pytest

from hyphanet.io import VolumeFileError, header_path, load_volume, read_pgm, save_volume, write_pgm
from hyphanet.volume import Volume


def test_round_trip_is_bit_exact(tmp_path, rng):
    gray = Volume(rng.random((5, 4, 3)).astype(np.float32), (1.0, 1.0, 2.5), "gray")
    binary = Volume((rng.random((6, 2, 7)) < 0.4).astype(np.uint8), kind="binary")
    for name, vol in (("g.raw", gray), ("b.raw", binary)):
        save_volume(vol, tmp_path / name)
        back = load_volume(tmp_path / name)
        assert back.data.shape == vol.data.shape and back.scale == vol.scale and back.kind == vol.kind
        assert back.data.tobytes() == vol.data.tobytes()
        raw = (tmp_path / name).read_bytes()
        save_volume(back, tmp_path / ("again_" + name))
        assert (tmp_path / ("again_" + name)).read_bytes() == raw
        assert load_volume(header_path(tmp_path / name)).data.tobytes() == vol.data.tobytes()


def test_float_byte_layout(tmp_path):
    data = np.zeros((2, 2, 2), dtype=np.float32)
    data[1, 0, 0] = 0.5
    save_volume(Volume(data), tmp_path / "v.raw")
    raw = (tmp_path / "v.raw").read_bytes()
    assert len(raw) == 32
    assert raw[4:8] == struct.pack("<f", 0.5)
    assert raw.count(b"\x00") == 31  # 0.5f is 00 00 00 3f
    header = json.loads((tmp_path / "v.raw.json").read_text())
    assert header == {"dims": [2, 2, 2], "dtype": "f32le", "order": "x-fastest", "scale": [1.0, 1.0, 1.0], "kind": "gray"}


def _write(tmp_path, header, payload):
    (tmp_path / "v.raw").write_bytes(payload)
    (tmp_path / "v.raw.json").write_text(json.dumps(header))
    return tmp_path / "v.raw"


def test_payload_length_mismatch(tmp_path):
    path = _write(tmp_path, {"dims": [2, 2, 2], "dtype": "u8"}, bytes(7))
    with pytest.raises(VolumeFileError, match="mismatch.*'dims'"):
        load_volume(path)


@pytest.mark.parametrize(
    "header, field",
    [
        ({"dims": [2, 2, 2], "dtype": "f64"}, "dtype"),
        ({"dtype": "u8"}, "dims"),
        ({"dims": [2, -2, 2], "dtype": "u8"}, "dims"),
        ({"dims": [2, 2, 2], "dtype": "u8", "order": "z-fastest"}, "order"),
        ({"dims": [2, 2, 2], "dtype": "u8", "scale": [1, 1]}, "scale"),
        ({"dims": [2, 2, 2], "dtype": "u8", "kind": "label"}, "kind"),
    ],
)
def test_bad_header_names_field(tmp_path, header, field):
    path = _write(tmp_path, header, bytes(8))
    with pytest.raises(VolumeFileError, match=f"'{field}'"):
        load_volume(path)


def test_binary_payload_must_be_zero_one(tmp_path):
    path = _write(tmp_path, {"dims": [2, 2, 2], "dtype": "u8", "kind": "binary"}, bytes([0, 1, 2, 0, 0, 0, 0, 0]))
    with pytest.raises(VolumeFileError, match="kind"):
        load_volume(path)


def test_missing_files(tmp_path):
    with pytest.raises(VolumeFileError, match="not found"):
        load_volume(tmp_path / "nothing.raw")
    (tmp_path / "h.raw.json").write_text('{"dims": [1], "dtype": "u8"}')
    with pytest.raises(VolumeFileError, match="payload"):
        load_volume(tmp_path / "h.raw")


def test_pgm_round_trip(tmp_path):
    img = np.zeros((5, 3))
    img[4, 0] = 1.0
    img[1, 2] = 128 / 255
    write_pgm(img, tmp_path / "s.pgm")
    raw = (tmp_path / "s.pgm").read_bytes()
    assert raw.startswith(b"P5\n5 3\n255\n") and len(raw) == len(b"P5\n5 3\n255\n") + 15
    np.testing.assert_array_equal(read_pgm(tmp_path / "s.pgm"), img)


def test_pgm_reader_comments_and_16bit(tmp_path):
    pix = np.array([[0, 1000], [65535, 2]], dtype=">u2")  # rows are y
    (tmp_path / "w.pgm").write_bytes(b"P5\n# made by hand\n2 2\n65535\n" + pix.tobytes())
    img = read_pgm(tmp_path / "w.pgm")
    assert img.shape == (2, 2) and img[1, 0] == 1000 / 65535 and img[0, 1] == 1.0
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(VolumeFileError):
        read_pgm(tmp_path / "bad.pgm")
    (tmp_path / "short.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(VolumeFileError, match="expected 16"):
        read_pgm(tmp_path / "short.pgm")
