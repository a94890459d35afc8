"""Synthetic pianoroll corpora for tests and desk-scale experiments."""
from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .pianoroll import Pianoroll
from .rng import Stream


def toy_piece(cfg: TrainConfig, rng: Stream, pitch_ranges=None, notes_per_bar: int = 2,
              max_len: int | None = None) -> Pianoroll:
    """Random sustained notes; track ``t`` draws pitches from ``pitch_ranges[t]``."""
    T, B, S, P = cfg.shape
    max_len = max_len or max(1, S // 2)
    cells = -np.ones((T, B * S, P), dtype=np.int8)
    for t in range(T):
        lo, hi = pitch_ranges[t] if pitch_ranges else (0, P)
        for b in range(B):
            for _ in range(notes_per_bar):
                onset = b * S + int(rng.integers(S))
                length = 1 + int(rng.integers(max_len))
                pitch = lo + int(rng.integers(hi - lo))
                cells[t, onset:min(onset + length, B * S), pitch] = 1
    return Pianoroll(cells.reshape(T, B, S, P), cfg.track_names)


def toy_corpus(cfg: TrainConfig, n: int, seed: int = 0, **kwargs) -> list[Pianoroll]:
    rng = Stream(seed, "toy-corpus")
    return [toy_piece(cfg, rng, **kwargs) for _ in range(n)]


def disjoint_corpus(cfg: TrainConfig, n: int, seed: int = 0, **kwargs) -> list[Pianoroll]:
    """Track ``t`` uses only the ``t``-th equal slice of the pitch axis."""
    width = cfg.pitches // cfg.tracks
    ranges = [(t * width, (t + 1) * width) for t in range(cfg.tracks)]
    return toy_corpus(cfg, n, seed, pitch_ranges=ranges, **kwargs)
