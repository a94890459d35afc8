"""Small end-to-end experiments shared by the acceptance tests and ``scripts/``.

Each returns a plain dataclass so callers can print or assert on it.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import bvae, mfgvae, refine, toy, trainer
from .config import TrainConfig, toy_config
from .pianoroll import Pianoroll
from .rng import Stream


# --------------------------------------------------------------------------
# restore after overfitting a tiny corpus

def overfit_config(seed: int = 0) -> TrainConfig:
    return toy_config(tracks=2, bars=2, steps_per_bar=8, pitches=12, latent_dim=8, intermediate_dim=32,
                      global_latent_dim=32, mfg_hidden_dim=64, batch_size=4, learning_rate=1e-2,
                      epochs_stage1=1500, epochs_refine=60, epochs_stage2=2000, seed=seed)


@dataclass
class OverfitResult:
    accuracy: float  # per-cell restore accuracy pooled over the corpus
    per_piece: list
    seconds: float


def overfit_restore(seed: int = 0, cfg: TrainConfig | None = None, n_pieces: int = 4) -> OverfitResult:
    cfg = cfg or overfit_config(seed)
    corpus = toy.toy_corpus(cfg, n_pieces, seed=seed + 1, notes_per_bar=4, max_len=4)
    start = time.perf_counter()
    model, _ = trainer.train_all(corpus, cfg)
    rng = Stream(seed, "restore")
    per_piece = [float((mfgvae.restore(p, model, rng).cells == p.cells).mean()) for p in corpus]
    return OverfitResult(float(np.mean(per_piece)), per_piece, time.perf_counter() - start)


# --------------------------------------------------------------------------
# independent vs shared per-track weights

def pitch_histogram(rolls: list[Pianoroll], track: int) -> np.ndarray:
    """Normalised count of +1 cells per pitch row (all zeros if nothing sounds)."""
    counts = np.stack([r.cells[track] for r in rolls]) == 1
    h = counts.sum(axis=(0, 1, 2)).astype(np.float64)
    return h / h.sum() if h.sum() else h


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


def sharing_config(seed: int = 0, shared: bool = False) -> TrainConfig:
    return toy_config(tracks=2, bars=1, steps_per_bar=8, pitches=12, latent_dim=4, intermediate_dim=16,
                      batch_size=8, learning_rate=1e-2, epochs_stage1=600, epochs_refine=5, seed=seed,
                      shared_bvae=shared)


@dataclass
class SharingResult:
    tv_independent: float
    tv_shared: float
    histograms: dict = field(default_factory=dict)


def shared_vs_independent(seed: int = 0, n_samples: int = 2000, n_pieces: int = 16) -> SharingResult:
    """Train both variants on two tracks with disjoint pitch ranges and compare
    the pitch histograms of tracks sampled from each track's own prior."""
    tv, hists = {}, {}
    for shared in (False, True):
        cfg = sharing_config(seed, shared)
        corpus = toy.disjoint_corpus(cfg, n_pieces, seed=seed, notes_per_bar=3, max_len=4)
        s1 = trainer.train_stage1(corpus, cfg)
        model = mfgvae.Model(cfg, s1.bvaes, s1.refines)
        gen = mfgvae.generate_unfused(Stream(seed, "generate"), model, n=n_samples)
        h = [pitch_histogram(gen, t) for t in range(cfg.tracks)]
        tv[shared] = total_variation(h[0], h[1])
        hists[shared] = h
    return SharingResult(tv[False], tv[True], hists)


# --------------------------------------------------------------------------
# refine granularity

REFINE_LR = 1e-3


def granularity_config(seed: int = 0) -> TrainConfig:
    return toy_config(tracks=1, track_names=("piano",), bars=2, steps_per_bar=8, pitches=12, latent_dim=4,
                      intermediate_dim=32, refine_channels=4, batch_size=8, learning_rate=1e-2,
                      epochs_stage1=400, epochs_refine=60, seed=seed)


@dataclass
class GranularityResult:
    raw_accuracy: float  # sign of the raw decoder output
    accuracy: dict  # granularity -> held-in binary accuracy after refine


def refine_granularity_trend(seed: int = 0, n_pieces: int = 16,
                             cfg: TrainConfig | None = None) -> GranularityResult:
    """Train one BVAE, then two refine nets on its raw output for the same
    number of epochs: one with per-timestep examples, one with per-bar examples."""
    cfg = cfg or granularity_config(seed)
    corpus = toy.toy_corpus(cfg, n_pieces, seed=seed, notes_per_bar=4, max_len=4)
    x = trainer.corpus_labels(corpus, cfg)[:, 0]
    rng = Stream(seed, "bvae")
    params = trainer.train_bvae(x, cfg, bvae.init_params(cfg, 0), rng, trainer.LossLog(), "piano")
    raw = trainer.raw_outputs(x, params, cfg, rng)
    acc = {}
    for g in ("note", "bar"):
        r = trainer.train_refine(raw, x, cfg.replace(learning_rate=REFINE_LR), refine.init_params(cfg, 0),
                                 Stream(seed, "refine"), granularity=g)
        acc[g] = float(((refine.refine_forward(raw, r) >= 0.5) == (x > 0.5)).mean())
    return GranularityResult(float(((raw >= 0) == (x > 0.5)).mean()), acc)
