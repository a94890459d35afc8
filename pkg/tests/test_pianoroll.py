import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trackfusion import pianoroll as pr
from trackfusion.pianoroll import CodecError, LabelRoll, Pianoroll

from conftest import random_roll

dims = st.integers(1, 16)


def test_cells_must_be_plus_minus_one():
    with pytest.raises(ValueError):
        Pianoroll(np.zeros((1, 1, 1, 1)))
    with pytest.raises(ValueError):
        Pianoroll(np.ones((1, 1, 1)))
    with pytest.raises(ValueError):
        LabelRoll(np.full((1, 1, 1, 1), -1))


def test_label_conversion_values():
    p = Pianoroll(np.array([-1, 1]).reshape(1, 1, 1, 2))
    np.testing.assert_array_equal(pr.to_labels(p).cells.ravel(), [0, 1])
    back = pr.from_labels(LabelRoll(np.array([0, 1]).reshape(1, 1, 1, 2)))
    np.testing.assert_array_equal(back.cells.ravel(), [-1, 1])


@settings(max_examples=40, deadline=None)
@given(t=dims, b=dims, s=dims, p=dims, seed=st.integers(0, 2**16))
def test_label_and_codec_roundtrips(t, b, s, p, seed):
    roll = random_roll((t, b, s, p), seed=seed)
    assert pr.from_labels(pr.to_labels(roll)) == roll
    labels = pr.to_labels(roll)
    assert pr.to_labels(pr.from_labels(labels)) == labels
    data = pr.encode_file(roll)
    back = pr.decode_file(data)
    assert back == roll
    assert pr.encode_file(back) == data


def test_empty_roll_encodes_to_header_plus_zero_bitmap():
    roll = Pianoroll.empty(2, 1, 4, 3, ("a", "bc"))
    data = pr.encode_file(roll)
    header = b"PRL1" + struct.pack(">BHHHH", 1, 2, 1, 4, 3) + b"\x01a\x02bc"
    bitmap = bytes(3)  # 24 cells
    assert data == header + bitmap + struct.pack(">I", zlib.crc32(header + bitmap))


def test_bit_packing_order_is_msb_first():
    cells = -np.ones((1, 1, 1, 9), dtype=np.int8)
    cells[0, 0, 0, 0] = 1
    cells[0, 0, 0, 8] = 1
    data = pr.encode_file(Pianoroll(cells, ("x",)))
    assert data[15:17] == b"\x80\x80"


def test_every_payload_bit_flip_is_detected():
    roll = random_roll((2, 2, 4, 5), seed=3, names=("bass", "drums"))
    data = pr.encode_file(roll)
    payload_start = 13 + 5 + 6
    for i in range(payload_start, len(data)):
        for bit in range(8):
            bad = bytearray(data)
            bad[i] ^= 1 << bit
            with pytest.raises(CodecError, match="checksum"):
                pr.decode_file(bytes(bad))


def test_codec_errors():
    data = pr.encode_file(random_roll((1, 1, 2, 2)))
    with pytest.raises(CodecError, match="magic"):
        pr.decode_file(b"XXXX" + data[4:])
    with pytest.raises(CodecError, match="version"):
        pr.decode_file(data[:4] + b"\x02" + data[5:])
    for cut in (3, 10, len(data) - 1):
        with pytest.raises(CodecError):
            pr.decode_file(data[:cut])
    with pytest.raises(CodecError, match="truncated"):
        pr.decode_file(data[:-2])


def test_save_load(tmp_path):
    roll = random_roll((2, 1, 3, 4), seed=7, names=("a", "b"))
    pr.save(roll, tmp_path / "x.pr1")
    assert pr.load(tmp_path / "x.pr1") == roll


def test_render_dimensions_and_pixels():
    roll = Pianoroll.empty(2, 2, 3, 4)
    img = pr.parse_pgm(pr.render_pgm(roll, 1))
    assert img.shape == (4, 6)
    assert not img.any()
    cells = roll.cells.copy()
    cells[1, 1, 2, 0] = 1  # lowest pitch, last step
    img = pr.parse_pgm(pr.render_pgm(Pianoroll(cells), 1))
    assert (img == 255).sum() == 1 and img[3, 5] == 255
    assert pr.render_pgm(Pianoroll(cells), 0).startswith(b"P5\n6 4\n255\n")


def test_render_bad_track():
    with pytest.raises(IndexError):
        pr.render_pgm(Pianoroll.empty(2, 1, 1, 1), 2)
