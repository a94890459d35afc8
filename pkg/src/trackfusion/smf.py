"""Standard MIDI File (formats 0 and 1) reader and pianoroll quantiser."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .pianoroll import Pianoroll


class SMFError(ValueError):
    pass


@dataclass(frozen=True)
class NoteEvent:
    track: int
    pitch: int
    onset_tick: int
    duration_ticks: int
    velocity: int
    channel: int = 0


# data bytes following a channel status nibble
_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _read_vlq(buf: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise SMFError("truncated variable-length quantity")
        byte = buf[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise SMFError("variable-length quantity longer than 4 bytes")


def _chunks(data: bytes):
    pos = 0
    while pos < len(data):
        if pos + 8 > len(data):
            raise SMFError("truncated chunk header")
        kind = data[pos:pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4:pos + 8])
        pos += 8
        if pos + length > len(data):
            raise SMFError(f"chunk {kind!r} length {length} runs past end of file")
        yield kind, pos, pos + length
        pos += length


def parse_smf(data: bytes) -> tuple[list[NoteEvent], int]:
    """Return note events and ticks per beat.

    Note-on with velocity 0 acts as note-off, running status is honoured,
    notes still sounding at end of track are closed there, and meta/SysEx
    events are skipped. For format 0 files ``NoteEvent.track`` is the MIDI
    channel; for format 1 it is the track chunk index.
    """
    data = bytes(data)
    chunks = _chunks(data)
    try:
        kind, start, end = next(chunks)
    except StopIteration:
        raise SMFError("empty file") from None
    if kind != b"MThd" or end - start < 6:
        raise SMFError("missing or short MThd header")
    fmt, ntracks, division = struct.unpack(">HHH", data[start:start + 6])
    if fmt == 2:
        raise SMFError("format 2 is not supported")
    if fmt not in (0, 1):
        raise SMFError(f"unknown format {fmt}")
    if division & 0x8000:
        raise SMFError("SMPTE time division is not supported")
    if division == 0:
        raise SMFError("zero ticks per beat")

    events: list[NoteEvent] = []
    track_index = 0
    for kind, start, end in chunks:
        if kind != b"MTrk":
            continue  # unknown chunks are skipped per the standard
        events.extend(_parse_track(data, start, end, track_index, per_channel=(fmt == 0)))
        track_index += 1
    events.sort(key=lambda e: (e.onset_tick, e.track, e.pitch))
    return events, division


def _parse_track(buf: bytes, pos: int, end: int, index: int, per_channel: bool) -> list[NoteEvent]:
    tick = 0
    status = None
    sounding: dict[tuple[int, int], tuple[int, int]] = {}  # (channel, pitch) -> (onset, velocity)
    out: list[NoteEvent] = []

    def close(channel, pitch, at):
        onset, vel = sounding.pop((channel, pitch))
        if at > onset:
            out.append(NoteEvent(channel if per_channel else index, pitch, onset, at - onset, vel, channel))

    while pos < end:
        delta, pos = _read_vlq(buf, pos, end)
        tick += delta
        if pos >= end:
            raise SMFError("truncated event")
        byte = buf[pos]
        if byte == 0xFF:
            if pos + 2 > end:
                raise SMFError("truncated meta event")
            meta = buf[pos + 1]
            length, pos = _read_vlq(buf, pos + 2, end)
            pos += length
            if pos > end:
                raise SMFError("meta event runs past end of track")
            if meta == 0x2F:
                break
            continue
        if byte in (0xF0, 0xF7):
            length, pos = _read_vlq(buf, pos + 1, end)
            pos += length
            if pos > end:
                raise SMFError("SysEx event runs past end of track")
            status = None
            continue
        if byte & 0x80:
            status = byte
            pos += 1
        elif status is None:
            raise SMFError("running status without a previous status byte")
        kind = status & 0xF0
        n = _DATA_LEN.get(kind)
        if n is None:
            raise SMFError(f"unexpected status byte 0x{status:02x}")
        if pos + n > end:
            raise SMFError("truncated channel event")
        payload = buf[pos:pos + n]
        pos += n
        channel = status & 0x0F
        if kind == 0x90 and payload[1] > 0:
            key = (channel, payload[0])
            if key in sounding:  # re-strike closes the earlier note
                close(channel, payload[0], tick)
            sounding[key] = (tick, payload[1])
        elif kind in (0x80, 0x90):
            if (channel, payload[0]) in sounding:
                close(channel, payload[0], tick)
    for channel, pitch in sorted(sounding):
        close(channel, pitch, tick)
    return out


# --------------------------------------------------------------------------
# quantisation

@dataclass
class QuantizeResult:
    pianoroll: Pianoroll
    placed: int
    dropped: int


def quantize(events: Sequence[NoteEvent], ticks_per_beat: int, *, tracks: int = 5, bars: int = 4,
             steps_per_bar: int = 16, pitches: int = 24, pitch_lo: int = 48, beats_per_bar: int = 4,
             track_map: Mapping[int, int] | None = None, track_names: Sequence[str] = ()) -> QuantizeResult:
    """Sample each timestep's start tick: a cell is on iff a note covers that tick.

    Events outside the pitch window or on an unmapped source track are dropped;
    all others count as placed even if they cover no sampled tick.
    ``track_map`` maps source track index to pianoroll track (identity by default).
    """
    if min(tracks, bars, steps_per_bar, pitches) < 1 or ticks_per_beat < 1 or beats_per_bar < 1:
        raise ValueError("zero-length pianoroll window")
    if track_map is None:
        track_map = {i: i for i in range(tracks)}
    cells = -np.ones((tracks, bars * steps_per_bar, pitches), dtype=np.int8)
    step_ticks = Fraction(ticks_per_beat * beats_per_bar, steps_per_bar)
    n_steps = bars * steps_per_bar
    placed = dropped = 0
    for ev in events:
        dest = track_map.get(ev.track)
        row = ev.pitch - pitch_lo
        if dest is None or not 0 <= dest < tracks or not 0 <= row < pitches:
            dropped += 1
            continue
        placed += 1
        # steps k with onset <= k * step_ticks < onset + duration
        first = -(-Fraction(ev.onset_tick) // step_ticks)  # ceil
        stop = -(-Fraction(ev.onset_tick + ev.duration_ticks) // step_ticks)
        first, stop = max(int(first), 0), min(int(stop), n_steps)
        if stop > first:
            cells[dest, first:stop, row] = 1
    roll = Pianoroll(cells.reshape(tracks, bars, steps_per_bar, pitches), track_names)
    return QuantizeResult(roll, placed, dropped)


# --------------------------------------------------------------------------
# writing (used to build fixtures)

def _vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def write_smf(tracks: Sequence[Sequence[tuple[int, int, int, int]]], ticks_per_beat: int = 480,
              fmt: int = 1) -> bytes:
    """Assemble a minimal SMF from ``(onset, duration, pitch, velocity)`` notes per track.

    Track ``i`` is written on channel ``i``. Note-offs are emitted as note-on
    velocity 0 with running status.
    """
    out = b"MThd" + struct.pack(">IHHH", 6, fmt, len(tracks), ticks_per_beat)
    for i, notes in enumerate(tracks):
        msgs = []
        for onset, dur, pitch, vel in notes:
            msgs.append((onset, 1, pitch, vel))
            msgs.append((onset + dur, 0, pitch, 0))
        msgs.sort(key=lambda m: (m[0], m[1]))
        body = bytearray()
        now = 0
        status = None
        for at, _, pitch, vel in msgs:
            body += _vlq(at - now)
            now = at
            s = 0x90 | (i & 0x0F)
            if s != status:
                body.append(s)
                status = s
            body += bytes([pitch, vel])
        body += b"\x00\xff\x2f\x00"
        out += b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
    return out
