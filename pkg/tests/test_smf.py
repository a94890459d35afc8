import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trackfusion.smf import NoteEvent, SMFError, parse_smf, quantize, write_smf


def smf(fmt, tracks, division=480):
    out = b"MThd" + struct.pack(">IHHH", 6, fmt, len(tracks), division)
    for body in tracks:
        out += b"MTrk" + struct.pack(">I", len(body)) + body
    return out


END = b"\x00\xff\x2f\x00"


def test_hand_assembled_single_note():
    body = b"\x00\x90\x3c\x64" + b"\x83\x60\x80\x3c\x40" + END  # 480 = VLQ 83 60
    events, tpb = parse_smf(smf(0, [body]))
    assert tpb == 480
    assert events == [NoteEvent(0, 60, 0, 480, 100, 0)]


def test_empty_track():
    assert parse_smf(smf(1, [END]))[0] == []


def test_velocity_zero_and_running_status():
    body = b"\x00\x91\x40\x50" + b"\x60\x40\x00" + b"\x10\x43\x20" + b"\x20\x43\x00" + END
    events, _ = parse_smf(smf(0, [body]))
    assert [(e.pitch, e.onset_tick, e.duration_ticks, e.track) for e in events] == [(64, 0, 96, 1), (67, 112, 32, 1)]


def test_meta_and_sysex_are_skipped():
    tempo = b"\x00\xff\x51\x03\x07\xa1\x20"
    sysex = b"\x00\xf0\x03\x43\x12\xf7"
    body = tempo + sysex + b"\x00\x90\x3c\x64\x10\x80\x3c\x00" + END
    events, _ = parse_smf(smf(1, [body]))
    assert [(e.pitch, e.duration_ticks) for e in events] == [(60, 16)]


def test_unmatched_note_closes_at_track_end():
    body = b"\x00\x90\x3c\x64" + b"\x81\x00\xff\x2f\x00"
    events, _ = parse_smf(smf(1, [body]))
    assert events[0].duration_ticks == 128


def test_format1_track_index():
    data = write_smf([[(0, 10, 60, 90)], [(5, 10, 62, 90)]])
    events, _ = parse_smf(data)
    assert [(e.track, e.pitch) for e in events] == [(0, 60), (1, 62)]


def test_errors():
    with pytest.raises(SMFError, match="format 2"):
        parse_smf(smf(2, [END]))
    with pytest.raises(SMFError):
        parse_smf(smf(1, [END])[:-2])
    with pytest.raises(SMFError, match="variable-length"):
        parse_smf(smf(1, [b"\x81\x82"]))
    with pytest.raises(SMFError):
        parse_smf(b"")
    with pytest.raises(SMFError, match="SMPTE"):
        parse_smf(smf(1, [END], division=0xE728))


def test_one_bar_note_fills_row():
    ev = [NoteEvent(0, 48, 0, 4 * 480, 100)]
    res = quantize(ev, 480, tracks=1, bars=2, steps_per_bar=16, pitches=12, pitch_lo=48)
    cells = res.pianoroll.cells
    assert (cells[0, 0, :, 0] == 1).all()
    assert (cells == 1).sum() == 16


def test_no_events_is_silent():
    res = quantize([], 480, tracks=2, bars=1, steps_per_bar=4, pitches=3)
    assert (res.pianoroll.cells == -1).all() and res.placed == res.dropped == 0


def test_half_step_note_mid_step_covers_nothing():
    step = 480 * 4 // 16  # 120 ticks
    ev = [NoteEvent(0, 50, step + 30, 60, 100)]
    res = quantize(ev, 480, tracks=1, bars=1, steps_per_bar=16, pitches=12, pitch_lo=48)
    assert (res.pianoroll.cells == -1).all()
    assert res.placed == 1


def test_zero_window_rejected():
    with pytest.raises(ValueError):
        quantize([], 480, tracks=1, bars=0, steps_per_bar=4, pitches=3)


note = st.tuples(st.integers(0, 3), st.integers(30, 90), st.integers(0, 4000), st.integers(1, 900))


@settings(max_examples=50, deadline=None)
@given(st.lists(note, max_size=30))
def test_quantize_counts_and_values(notes):
    events = [NoteEvent(t, p, on, d, 64) for t, p, on, d in notes]
    res = quantize(events, 96, tracks=2, bars=2, steps_per_bar=8, pitches=12, pitch_lo=48)
    assert res.placed + res.dropped == len(events)
    assert set(np.unique(res.pianoroll.cells)) <= {-1, 1}


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(0, 2000), st.integers(1, 500), st.integers(0, 127),
                                   st.integers(1, 127)), max_size=6), min_size=1, max_size=3))
def test_writer_parser_roundtrip(tracks):
    # the fixture writer and the parser agree on notes that do not overlap at one pitch
    clean = []
    for notes in tracks:
        busy, keep = {}, []
        for on, dur, pitch, vel in sorted(notes):
            if busy.get(pitch, -1) < on:
                keep.append((on, dur, pitch, vel))
                busy[pitch] = on + dur
        clean.append(keep)
    events, _ = parse_smf(write_smf(clean))
    expect = sorted((on, t, p, d, v) for t, ns in enumerate(clean) for on, d, p, v in ns)
    assert sorted((e.onset_tick, e.track, e.pitch, e.duration_ticks, e.velocity) for e in events) == expect
