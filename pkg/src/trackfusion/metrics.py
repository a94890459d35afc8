"""Objective metrics over pianoroll corpora.

SR (scale ratio), UPC (used pitch classes per bar) and QN (qualified-note
ratio) are measured on melodic tracks; DP (drum pattern) on the drum track.
Notes are maximal runs of ``+1`` cells at one pitch along a track's timeline.
Metrics that have nothing to measure come back as ``None`` rather than 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pianoroll import Pianoroll

MAJOR = (0, 2, 4, 5, 7, 9, 11)
NATURAL_MINOR = (0, 2, 3, 5, 7, 8, 10)
# 12 majors then 12 natural minors, keyed by (root, kind)
SCALES = {(root, kind): frozenset((root + i) % 12 for i in steps)
          for kind, steps in (("major", MAJOR), ("minor", NATURAL_MINOR)) for root in range(12)}


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsConfig:
    pitch_lo: int = 48  # MIDI pitch of pitch row 0; 48 is a C
    qn_threshold: int = 3
    dp_grids: tuple = (8,)
    drum_name: str = "drums"


@dataclass(frozen=True)
class Note:
    pitch: int  # row on the pitch axis
    onset: int  # step on the track timeline
    length: int


def _check_track(p: Pianoroll, track: int):
    if not 0 <= track < p.shape[0]:
        raise IndexError(f"track {track} out of range for {p.shape[0]} tracks")


def extract_notes(p: Pianoroll, track: int) -> list[Note]:
    """Maximal runs of +1 per pitch over the whole timeline, so runs crossing bar lines stay whole."""
    _check_track(p, track)
    on = p.track_sequence(track) > 0  # (B*S, P)
    padded = np.zeros((on.shape[0] + 2, on.shape[1]), dtype=np.int8)
    padded[1:-1] = on
    edges = np.diff(padded, axis=0)
    notes = []
    for pitch in range(on.shape[1]):
        starts = np.flatnonzero(edges[:, pitch] == 1)
        stops = np.flatnonzero(edges[:, pitch] == -1)
        notes.extend(Note(pitch, int(a), int(b - a)) for a, b in zip(starts, stops))
    notes.sort(key=lambda n: (n.onset, n.pitch))
    return notes


def _pitch_class(note: Note, cfg: MetricsConfig) -> int:
    return (cfg.pitch_lo + note.pitch) % 12


def _scale_hits(notes: Sequence[Note], cfg: MetricsConfig) -> int:
    """Onsets inside the best of the 24 diatonic scales."""
    classes = np.bincount([_pitch_class(n, cfg) for n in notes], minlength=12)
    return max(int(sum(classes[c] for c in scale)) for scale in SCALES.values())


def _pct(num: int, den: int) -> float | None:
    return None if den == 0 else 100.0 * num / den


def scale_ratio(p: Pianoroll, track: int, cfg: MetricsConfig = MetricsConfig()) -> float | None:
    """Percent of note onsets in the best-fitting major or natural-minor scale."""
    notes = extract_notes(p, track)
    return _pct(_scale_hits(notes, cfg), len(notes)) if notes else None


def bar_pitch_classes(p: Pianoroll, track: int, cfg: MetricsConfig = MetricsConfig()) -> list[int]:
    """Distinct pitch classes per bar; a note belongs to the bar of its onset."""
    S = p.shape[2]
    classes = [set() for _ in range(p.shape[1])]
    for n in extract_notes(p, track):
        classes[n.onset // S].add(_pitch_class(n, cfg))
    return [len(c) for c in classes]


def used_pitch_classes(p: Pianoroll, track: int, cfg: MetricsConfig = MetricsConfig()) -> float | None:
    """Mean distinct pitch classes over bars that hold at least one onset."""
    counts = [c for c in bar_pitch_classes(p, track, cfg) if c]
    return float(np.mean(counts)) if counts else None


def qualified_notes(p: Pianoroll, track: int, cfg: MetricsConfig = MetricsConfig()) -> float | None:
    notes = extract_notes(p, track)
    return _pct(sum(n.length >= cfg.qn_threshold for n in notes), len(notes))


def drum_track(p: Pianoroll, cfg: MetricsConfig = MetricsConfig()) -> int:
    try:
        return p.track_names.index(cfg.drum_name)
    except ValueError:
        raise MetricsError(f"no track named {cfg.drum_name!r} in {p.track_names}") from None


def on_grid(step: int, steps_per_bar: int, grids: Sequence[int]) -> bool:
    """Whether within-bar ``step`` falls on a multiple of S/g for some g (exact rational test)."""
    return any((step * g) % steps_per_bar == 0 for g in grids)


def _dp_hits(notes: Sequence[Note], S: int, cfg: MetricsConfig) -> int:
    return sum(on_grid(n.onset % S, S, cfg.dp_grids) for n in notes)


def drum_pattern(p: Pianoroll, cfg: MetricsConfig = MetricsConfig()) -> float | None:
    """Percent of drum onsets on the configured beat grids."""
    notes = extract_notes(p, drum_track(p, cfg))
    return _pct(_dp_hits(notes, p.shape[2], cfg), len(notes))


# --------------------------------------------------------------------------
# corpus report

@dataclass
class TrackMetrics:
    sr: float | None = None
    upc: float | None = None
    upc_total: float | None = None  # per-piece sum over bars, averaged over pieces
    qn: float | None = None
    dp: float | None = None
    per_bar_upc: list = field(default_factory=list)  # one list of bar counts per piece


@dataclass
class MetricsReport:
    tracks: dict  # name -> TrackMetrics
    drum: str | None
    n_pieces: int

    def rows(self) -> list[tuple[str, str, float | None]]:
        out = []
        for name, m in self.tracks.items():
            if name == self.drum:
                out.append((name, "DP", m.dp))
            else:
                out += [(name, "SR", m.sr), (name, "UPC", m.upc), (name, "UPC_total", m.upc_total),
                        (name, "QN", m.qn)]
        return out

    def to_csv(self) -> str:
        lines = ["track,metric,value"]
        lines += [f"{t},{k},{_fmt(v)}" for t, k, v in self.rows()]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"pieces: {self.n_pieces}"]
        for name, m in self.tracks.items():
            if name == self.drum:
                lines.append(f"{name:>10}  DP {_fmt(m.dp, '%')}")
            else:
                lines.append(f"{name:>10}  SR {_fmt(m.sr, '%')}  UPC {_fmt(m.upc)}"
                             f" (per piece {_fmt(m.upc_total)})  QN {_fmt(m.qn, '%')}")
        lines.append("per-bar UPC:")
        for name, m in self.tracks.items():
            if name != self.drum:
                bars = " | ".join(" ".join(str(c) for c in piece) for piece in m.per_bar_upc)
                lines.append(f"{name:>10}  {bars}")
        return "\n".join(lines) + "\n"


def _fmt(v, unit: str = "") -> str:
    if v is None:
        return "NA"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.4f}{unit}"


def evaluate(corpus: Sequence[Pianoroll], cfg: MetricsConfig = MetricsConfig()) -> MetricsReport:
    """Pool every metric over the corpus; SR fits one scale per piece."""
    corpus = list(corpus)
    if not corpus:
        raise MetricsError("empty corpus")
    first = corpus[0]
    for p in corpus[1:]:
        if p.shape != first.shape or p.track_names != first.track_names:
            raise MetricsError(f"inconsistent corpus: {p.shape} {p.track_names} vs "
                               f"{first.shape} {first.track_names}")
    S = first.shape[2]
    drum = cfg.drum_name if cfg.drum_name in first.track_names else None
    tracks = {}
    for t, name in enumerate(first.track_names):
        m = TrackMetrics()
        notes = [extract_notes(p, t) for p in corpus]
        total = sum(len(ns) for ns in notes)
        if name == drum:
            m.dp = _pct(sum(_dp_hits(ns, S, cfg) for ns in notes), total)
        else:
            m.sr = _pct(sum(_scale_hits(ns, cfg) for ns in notes if ns), total)
            m.qn = _pct(sum(n.length >= cfg.qn_threshold for ns in notes for n in ns), total)
            m.per_bar_upc = [bar_pitch_classes(p, t, cfg) for p in corpus]
            counts = [c for piece in m.per_bar_upc for c in piece if c]
            m.upc = float(np.mean(counts)) if counts else None
            m.upc_total = float(np.mean([sum(piece) for piece in m.per_bar_upc])) if counts else None
        tracks[name] = m
    return MetricsReport(tracks, drum, len(corpus))
