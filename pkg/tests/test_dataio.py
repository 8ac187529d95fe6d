import gzip
import struct
import warnings

import numpy as np
import pytest

from capspoe import dataio
from capspoe.routing import DiagramModel


def _idx_bytes(n, rows, cols, payload=None, magic=0x803):
    body = payload if payload is not None else bytes(range(256)) * (n * rows * cols // 256 + 1)
    body = body[:n * rows * cols] if payload is None else body
    return struct.pack(">IIII", magic, n, rows, cols) + body


def test_idx_header_and_normalization(tmp_path):
    path = tmp_path / "x.idx"
    path.write_bytes(_idx_bytes(2, 3, 4))
    data = dataio.load_idx(path)
    assert data.shape == (2, 3, 4)
    assert data[0, 0, 0] == 0.0 and data[0, 0, 1] == 1 / 255


def test_idx_gzip_and_round_trip(tmp_path):
    images = np.random.default_rng(0).integers(0, 256, (5, 28, 28), dtype=np.uint8)
    plain = tmp_path / "a.idx"
    dataio.write_idx(plain, images)
    zipped = tmp_path / "a.idx.gz"
    zipped.write_bytes(gzip.compress(plain.read_bytes()))
    for p in (plain, zipped):
        np.testing.assert_array_equal(np.round(dataio.load_idx(p, (28, 28)) * 255), images)


@pytest.mark.parametrize("raw, error", [
    (_idx_bytes(1, 2, 2, payload=bytes(3)), dataio.TruncatedPayloadError),
    (_idx_bytes(1, 2, 2, payload=bytes(5)), dataio.DimensionMismatchError),
    (_idx_bytes(1, 2, 2, payload=bytes(4), magic=0x801), dataio.BadMagicError),
    (b"\x00\x00", dataio.TruncatedPayloadError),
])
def test_idx_errors(tmp_path, raw, error):
    path = tmp_path / "bad"
    path.write_bytes(raw)
    with pytest.raises(error):
        dataio.load_idx(path)


def test_idx_expected_shape(tmp_path):
    path = tmp_path / "x"
    path.write_bytes(_idx_bytes(1, 2, 2, payload=bytes(4)))
    with pytest.raises(dataio.DimensionMismatchError):
        dataio.load_idx(path, (28, 28))


def test_cifar_record_layout(tmp_path):
    rec = np.zeros(dataio.CIFAR_RECORD, dtype=np.uint8)
    rec[0] = 7  # label
    rec[1] = 255  # red channel, pixel (0, 0)
    rec[1 + 1024 + 33] = 51  # green channel, pixel (1, 1)
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(rec.tobytes())
    img = dataio.load_cifar10(path)
    assert img.shape == (1, 32, 32, 3)
    assert img[0, 0, 0, 0] == 1.0
    assert img[0, 1, 1, 1] == pytest.approx(0.2)
    np.testing.assert_array_equal(dataio.load_cifar10(tmp_path), img)


def test_cifar_full_batch_and_bad_length(tmp_path):
    path = tmp_path / "b.bin"
    path.write_bytes(bytes(10_000 * dataio.CIFAR_RECORD))
    assert dataio.load_cifar10(path).shape == (10_000, 32, 32, 3)
    path.write_bytes(bytes(dataio.CIFAR_RECORD + 1))
    with pytest.raises(dataio.RecordSizeError):
        dataio.load_cifar10(path)


def test_grid_geometry(tmp_path):
    images = [np.full((28, 28), k / 80) for k in range(80)]
    path = dataio.emit_image_grid(images, 4, 20, tmp_path / "g.pgm")
    grid = dataio.read_pnm(path)
    assert grid.shape == (4 * 29 + 1, 20 * 29 + 1, 1)
    assert path.read_bytes().startswith(b"P5\n581 117\n255\n")
    assert grid[0].min() == 255 and grid[:, 0].min() == 255
    assert grid[1 + 29, 1 + 29 * 3, 0] == dataio.quantize(23 / 80)


def test_grid_single_and_colour(tmp_path):
    path = dataio.emit_image_grid([np.zeros((32, 32, 3))], 1, 1, tmp_path / "c.ppm")
    assert dataio.read_pnm(path).shape == (34, 34, 3)
    assert path.read_bytes()[:2] == b"P6"
    with pytest.raises(ValueError):
        dataio.image_grid([np.zeros((2, 2))] * 3, 2, 2)


def _diagram(c, lower, upper, threshold=0.01):
    from capspoe.routing import RoutingState, routing_diagram
    return routing_diagram(RoutingState(np.zeros_like(c), c, 3), lower, upper, threshold)


def test_svg_counts():
    rng = np.random.default_rng(0)
    c = rng.random((144, 10))
    c /= c.sum(axis=0)
    svg = dataio.routing_svg(_diagram(c, rng.random(144), rng.random(10), threshold=0.0))
    assert svg.count("<rect") == 144 + 10 + 1
    assert svg.count("<line") <= 1440
    assert svg.startswith("<?xml")


def test_svg_shades():
    svg = dataio.routing_svg(DiagramModel(np.zeros(3), np.zeros(2), []))
    assert svg.count('fill="#ffffff"') == 3 + 2 + 1
    c = np.full((4, 2), 0.25)
    d = _diagram(c, np.ones(4), np.ones(2))
    assert {s for _, _, s in d.edges} == {1.0}
    assert dataio.routing_svg(d).count('stroke="#000000"/>') == 8


def test_checkpoint_round_trip(tmp_path):
    sections = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(3.5), "c": np.zeros((0, 4))}
    path = dataio.save_checkpoint(sections, tmp_path / "m.ckpt")
    back = dataio.load_checkpoint(path)
    assert list(back) == ["a", "b", "c"]
    for k in sections:
        assert back[k].shape == sections[k].shape
        assert back[k].tobytes() == sections[k].tobytes()
    assert dataio.encode_checkpoint(back) == path.read_bytes()


def test_checkpoint_corruption(tmp_path):
    raw = bytearray(dataio.encode_checkpoint({"w": np.ones(4)}))
    raw[30] ^= 1
    with pytest.raises(dataio.ChecksumError):
        dataio.decode_checkpoint(bytes(raw))
    with pytest.raises(dataio.BadMagicError):
        dataio.decode_checkpoint(b"NOPE" + bytes(40))


def test_checkpoint_version(tmp_path):
    raw = bytearray(dataio.encode_checkpoint({"w": np.ones(1)})[:-8])
    raw[4:8] = struct.pack("<I", 2)
    raw = bytes(raw) + dataio._checksum(bytes(raw))
    with pytest.raises(dataio.VersionError):
        dataio.decode_checkpoint(raw)


def test_checkpoint_unknown_section_warns():
    raw = dataio.encode_checkpoint({"w": np.ones(2), "extra": np.zeros(1)})
    with pytest.warns(UserWarning, match="extra"):
        out = dataio.decode_checkpoint(raw, known={"w"})
    assert list(out) == ["w"]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        dataio.decode_checkpoint(raw)


def test_text_tensor_round_trip():
    text = "[run]\nseed = 3\n"
    assert dataio.tensor_to_text(dataio.text_to_tensor(text)) == text
