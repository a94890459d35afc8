"""Binarisation of raw decoder output.

The refine network treats each timestep's pitch vector as a multi-label
target: residual units of (1, 3, 12) convolutions over (track, timestep,
pitch) followed by a sigmoid head, trained with binary cross-entropy. The
hard-threshold (DBN) and sampled (SBN) binary neurons are kept as baselines.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Node
from .bvae import cell_bce_graph, logit_bce_graph
from .config import TrainConfig
from .params import ParamStore
from .rng import Stream

KERNEL = (1, 3, 12)  # (track, timestep, pitch)
_KT, _KP = KERNEL[1], KERNEL[2]
# same padding; the even pitch kernel puts the extra column on the high side
_PAD_T = (_KT // 2, _KT - 1 - _KT // 2)
_PAD_P = ((_KP - 1) // 2, _KP - 1 - (_KP - 1) // 2)


def param_shapes(cfg: TrainConfig) -> dict[str, tuple]:
    C = cfg.refine_channels
    shapes = {}
    for k in range(cfg.refine_units):
        shapes.update(ad.dense_shapes(f"res{k}.conv1", _KT * _KP * 1, C))
        shapes.update(ad.dense_shapes(f"res{k}.conv2", _KT * _KP * C, 1))
    shapes["head.w"] = (1,)
    shapes["head.b"] = (1,)
    return shapes


def init_params(cfg: TrainConfig, track: int) -> ParamStore:
    store = ParamStore.initialise(param_shapes(cfg), cfg.seed, prefix=f"refine{track}/")
    store["head.w"] = np.ones(1)  # start as sigmoid(raw); the residual branches start near zero
    return store


def conv_graph(x: Node, n: int, L: int, P: int, c_in: int, prefix: str) -> Node:
    """Same-padded (3, 12) convolution of ``x`` (n, L, P, c_in) via im2col and one matmul."""
    zeros = lambda *shape: ad.const(np.zeros(shape))
    parts = [zeros(n, _PAD_T[0], P, c_in), x, zeros(n, _PAD_T[1], P, c_in)]
    xt = ad.concat([p for p, w in zip(parts, (_PAD_T[0], 1, _PAD_T[1])) if w], axis=1)
    Lp = L + _KT - 1
    parts = [zeros(n, Lp, _PAD_P[0], c_in), xt, zeros(n, Lp, _PAD_P[1], c_in)]
    xp = ad.concat([p for p, w in zip(parts, (_PAD_P[0], 1, _PAD_P[1])) if w], axis=2)
    patches = [xp[:, dt:dt + L, dp:dp + P, :] for dt in range(_KT) for dp in range(_KP)]
    cols = ad.reshape(ad.concat(patches, axis=-1), (n * L * P, _KT * _KP * c_in))
    out = ad.dense(cols, prefix)
    return ad.reshape(out, (n, L, P, -1))


def logits_graph(raw: Node, n: int, L: int, P: int, units: int, channels: int) -> Node:
    """Pre-sigmoid head output (n, L, P); every intermediate keeps the (L, P) grid."""
    h = ad.reshape(raw, (n, L, P, 1))
    for k in range(units):
        a = ad.relu(conv_graph(h, n, L, P, 1, f"res{k}.conv1"))
        h = h + conv_graph(a, n, L, P, channels, f"res{k}.conv2")
    return ad.reshape(h * ad.var("head.w") + ad.var("head.b"), (n, L, P))


def refine_graph(raw: Node, n: int, L: int, P: int, units: int, channels: int) -> Node:
    """Probabilities of shape (n, L, P)."""
    return ad.sigmoid(logits_graph(raw, n, L, P, units, channels))


def masked_bce_graph(n: int, cfg: TrainConfig) -> Graph:
    """Training graph: mean per-example BCE over the cells selected by ``mask``.

    Inputs ``raw``, ``y``, ``mask`` (n, L, P) and scalar ``inv_count`` =
    1 / (selected examples * label dimension).
    """
    L, P = cfg.seq_len, cfg.pitches
    logits = logits_graph(ad.var("raw"), n, L, P, cfg.refine_units, cfg.refine_channels)
    cell = logit_bce_graph(ad.var("y"), logits)
    loss = ad.sum_(ad.var("mask") * cell) * ad.var("inv_count")
    return Graph(loss=loss, probs=ad.sigmoid(logits))


@lru_cache(maxsize=64)
def _forward(n: int, L: int, P: int, units: int, channels: int) -> Graph:
    return Graph(probs=refine_graph(ad.var("raw"), n, L, P, units, channels))


def _units_channels(params: ParamStore) -> tuple[int, int]:
    units = sum(1 for k in params if k.endswith(".conv1.W"))
    channels = params["res0.conv1.W"].shape[1] if units else 1
    return units, channels


def refine_forward(raw: np.ndarray, params: ParamStore, seq_len: int | None = None,
                   pitches: int | None = None) -> np.ndarray:
    """Map raw outputs (L, P) or (n, L, P) to probabilities of the same shape."""
    raw = np.asarray(raw, dtype=np.float64)
    single = raw.ndim == 2
    rb = raw[None] if single else raw
    if rb.ndim != 3:
        raise ValueError(f"expected (L, P) or (n, L, P), got {raw.shape}")
    n, L, P = rb.shape
    if (seq_len is not None and L != seq_len) or (pitches is not None and P != pitches):
        raise ValueError(f"raw shape {(L, P)} does not match configured {(seq_len, pitches)}")
    units, channels = _units_channels(params)
    probs = _forward(n, L, P, units, channels).run({**params, "raw": rb})["probs"]
    return probs[0] if single else probs


@lru_cache(maxsize=1)
def _bce() -> Graph:
    y, p = ad.var("y"), ad.var("p")
    return Graph(loss=ad.mean(cell_bce_graph(y, p)))


def bce_loss(y: np.ndarray, y_hat: np.ndarray) -> float:
    """-(1/N) sum[y log y_hat + (1 - y) log(1 - y_hat)] over all N labels."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"labels {y.shape} and predictions {y_hat.shape} differ")
    return float(_bce().run({"y": y, "p": y_hat})["loss"])


# --------------------------------------------------------------------------
# binary neurons

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def dbn(x) -> np.ndarray:
    """Deterministic binary neuron u(sigmoid(x) - 0.5), with u(0) = 1."""
    # sigmoid(x) >= 0.5 iff x >= 0; testing x directly avoids rounding at tiny |x|
    return (np.asarray(x, dtype=np.float64) >= 0).astype(np.int8)


def sbn(x, rng: Stream) -> np.ndarray:
    """Stochastic binary neuron u(sigmoid(x) - v), v ~ U[0, 1]."""
    s = _sigmoid(x)
    v = rng.uniform(np.shape(s))
    return (s - v >= 0).astype(np.int8)


def dbn_graph(x: Node) -> Node:
    return ad.step(ad.sigmoid(x) - 0.5)


def binarize(probs: np.ndarray, mode: str = "threshold", rng: Stream | None = None) -> np.ndarray:
    """Probabilities -> {-1, +1} cells (threshold: +1 iff p >= 0.5; sample: +1 w.p. p)."""
    probs = np.asarray(probs, dtype=np.float64)
    if mode == "threshold":
        labels = probs >= 0.5
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        labels = rng.uniform(probs.shape) < probs
    else:
        raise ValueError(f"unknown binarize mode {mode!r}")
    return labels.astype(np.int8) * 2 - 1

