"""Binary multi-track pianorolls, the ``.pr1`` codec and PGM rendering.

A pianoroll is a ``(track, bar, timestep, pitch)`` array whose cells are
``+1`` where a pitch sounds and ``-1`` elsewhere. The label domain used for
multi-label training maps those to ``{1, 0}`` via ``y = (v + 1) / 2``.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"PRL1"
VERSION = 1


class CodecError(ValueError):
    pass


@dataclass(eq=False)
class Pianoroll:
    cells: np.ndarray
    track_names: tuple = ()

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 4 or min(cells.shape) < 1:
            raise ValueError(f"pianoroll needs 4 non-empty axes, got shape {cells.shape}")
        if not np.all((cells == 1) | (cells == -1)):
            raise ValueError("pianoroll cells must be exactly -1 or +1")
        self.cells = cells.astype(np.int8)
        names = tuple(self.track_names) or tuple(f"track{i}" for i in range(cells.shape[0]))
        if len(names) != cells.shape[0]:
            raise ValueError(f"{len(names)} track names for {cells.shape[0]} tracks")
        self.track_names = names

    @classmethod
    def empty(cls, tracks: int, bars: int, steps: int, pitches: int, track_names=()) -> "Pianoroll":
        return cls(-np.ones((tracks, bars, steps, pitches), dtype=np.int8), track_names)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.cells.shape

    def __eq__(self, other):
        if not isinstance(other, Pianoroll):
            return NotImplemented
        return self.track_names == other.track_names and np.array_equal(self.cells, other.cells)

    def track_sequence(self, track: int) -> np.ndarray:
        """One track flattened to a ``(bars * steps, pitches)`` timeline."""
        t, b, s, p = self.shape
        return self.cells[track].reshape(b * s, p)


@dataclass(eq=False)
class LabelRoll:
    cells: np.ndarray
    track_names: tuple = field(default=())

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if not np.all((cells == 0) | (cells == 1)):
            raise ValueError("label cells must be exactly 0 or 1")
        self.cells = cells.astype(np.int8)
        self.track_names = tuple(self.track_names)

    def __eq__(self, other):
        if not isinstance(other, LabelRoll):
            return NotImplemented
        return self.track_names == other.track_names and np.array_equal(self.cells, other.cells)


def to_labels(p: Pianoroll) -> LabelRoll:
    return LabelRoll((p.cells + 1) // 2, p.track_names)


def from_labels(labels: LabelRoll, track_names=()) -> Pianoroll:
    return Pianoroll(labels.cells * 2 - 1, track_names or labels.track_names)


# --------------------------------------------------------------------------
# .pr1 codec
#
#   "PRL1" | u8 version | u16 T,B,S,P (big-endian)
#   T x (u8 len, utf-8 name)
#   ceil(T*B*S*P / 8) bytes, +1 -> bit 1, MSB first, (track, bar, step, pitch) order
#   u32 big-endian CRC32 of every preceding byte

def encode_file(p: Pianoroll) -> bytes:
    t, b, s, n = p.shape
    if max(p.shape) > 0xFFFF:
        raise CodecError("dimension too large for u16")
    out = bytearray(MAGIC)
    out += struct.pack(">BHHHH", VERSION, t, b, s, n)
    for name in p.track_names:
        raw = name.encode("utf-8")
        if len(raw) > 255:
            raise CodecError(f"track name too long: {name!r}")
        out += struct.pack(">B", len(raw)) + raw
    out += np.packbits((p.cells == 1).reshape(-1)).tobytes()
    out += struct.pack(">I", zlib.crc32(bytes(out)))
    return bytes(out)


def decode_file(data: bytes) -> Pianoroll:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise CodecError("bad magic")
    if len(data) < 13:
        raise CodecError("truncated header")
    version, t, b, s, n = struct.unpack(">BHHHH", data[4:13])
    if version != VERSION:
        raise CodecError(f"unsupported version {version}")
    if min(t, b, s, n) < 1:
        raise CodecError("zero-sized dimension")
    # walk the name lengths to find the expected size before trusting any content
    spans, pos = [], 13
    for _ in range(t):
        if pos >= len(data):
            raise CodecError("truncated track names")
        spans.append((pos + 1, pos + 1 + data[pos]))
        pos += 1 + data[pos]
    ncells = t * b * s * n
    nbytes = (ncells + 7) // 8
    if len(data) != pos + nbytes + 4:
        raise CodecError(f"truncated or oversized payload: {len(data)} bytes, expected {pos + nbytes + 4}")
    (crc,) = struct.unpack(">I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CodecError("checksum mismatch")
    names = tuple(data[i:j].decode("utf-8") for i, j in spans)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=pos))[:ncells]
    cells = bits.astype(np.int8) * 2 - 1
    return Pianoroll(cells.reshape(t, b, s, n), names)


def save(p: Pianoroll, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_file(p))


def load(path) -> Pianoroll:
    with open(path, "rb") as fh:
        return decode_file(fh.read())


# --------------------------------------------------------------------------
# rendering

def render_pgm(p: Pianoroll, track: int) -> bytes:
    """Binary PGM (P5) of one track: pitches as rows (highest on top), time as columns."""
    t, b, s, n = p.shape
    if not 0 <= track < t:
        raise IndexError(f"track {track} out of range 0..{t - 1}")
    img = np.where(p.track_sequence(track).T[::-1] == 1, 255, 0).astype(np.uint8)
    header = f"P5\n{b * s} {n}\n255\n".encode("ascii")
    return header + img.tobytes()


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a P5 image written by :func:`render_pgm` into a (rows, cols) array."""
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise CodecError("not a P5 PGM")
    cols, rows = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(rows, cols)
