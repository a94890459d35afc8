"""Upper-level fusion VAE over per-track latents, plus generation and restoration.

The encoder fuses the ``(track, 2 * latent_dim)`` matrix of per-track
``[mu || logvar]`` rows into one global Gaussian; the decoder rebuilds the
matrix from a global sample. Three fusion strategies share that contract:

``concat_mlp``
    rows flattened and passed through a tanh MLP; mirrored MLP decoder.
``projection``
    one trainable linear projection of the flattened rows, then the
    mu/logvar heads; linear decoder.
``vrae``
    rows read as a length-T sequence by an LSTM; the decoder unrolls an LSTM
    for T steps, one row per step.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import bvae, refine
from .autodiff import Graph, Node
from .bvae import LossParts, TrackLatent
from .config import STRATEGIES, TrainConfig
from .params import ParamStore
from .pianoroll import Pianoroll, to_labels
from .rng import Stream


class UntrainedError(RuntimeError):
    """A required parameter group is missing."""


def param_shapes(cfg: TrainConfig, strategy: str | None = None) -> dict[str, tuple]:
    strategy = strategy or cfg.strategy
    T, W, G, H = cfg.tracks, 2 * cfg.latent_dim, cfg.global_latent_dim, cfg.mfg_hidden_dim
    shapes = {}
    if strategy == "concat_mlp":
        shapes.update(ad.dense_shapes("enc.hidden", T * W, H))
        shapes.update(ad.dense_shapes("enc.mu", H, G))
        shapes.update(ad.dense_shapes("enc.logvar", H, G))
        shapes.update(ad.dense_shapes("dec.hidden", G, H))
        shapes.update(ad.dense_shapes("dec.out", H, T * W))
    elif strategy == "projection":
        shapes.update(ad.dense_shapes("enc.proj", T * W, H))
        shapes.update(ad.dense_shapes("enc.mu", H, G))
        shapes.update(ad.dense_shapes("enc.logvar", H, G))
        shapes.update(ad.dense_shapes("dec.proj", G, T * W))
    elif strategy == "vrae":
        shapes.update(ad.lstm_shapes("enc.lstm", W, H))
        shapes.update(ad.dense_shapes("enc.mu", H, G))
        shapes.update(ad.dense_shapes("enc.logvar", H, G))
        shapes.update(ad.dense_shapes("dec.init", G, 2 * H))
        shapes.update(ad.lstm_shapes("dec.lstm", G, H))
        shapes.update(ad.dense_shapes("dec.out", H, W))
    else:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    return shapes


def init_params(cfg: TrainConfig) -> ParamStore:
    return ParamStore.initialise(param_shapes(cfg), cfg.seed, prefix=f"mfg/{cfg.strategy}/")


def strategy_of(params: ParamStore) -> str:
    if "enc.lstm.W_i" in params:
        return "vrae"
    if "enc.proj.W" in params:
        return "projection"
    if "enc.hidden.W" in params:
        return "concat_mlp"
    raise ValueError("parameter store does not match any fusion strategy")


# --------------------------------------------------------------------------
# graph builders

def fuse_graph(m: Node, n: int, T: int, W: int, H: int, strategy: str) -> tuple[Node, Node]:
    if strategy == "concat_mlp":
        h = ad.tanh(ad.dense(ad.reshape(m, (n, T * W)), "enc.hidden"))
    elif strategy == "projection":
        h = ad.dense(ad.reshape(m, (n, T * W)), "enc.proj")
    elif strategy == "vrae":
        h = c = ad.const(np.zeros((n, H)))
        for t in range(T):
            h, c = ad.lstm_step(m[:, t, :], h, c, "enc.lstm")
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return ad.dense(h, "enc.mu"), ad.dense(h, "enc.logvar")


def unfuse_graph(z: Node, n: int, T: int, W: int, H: int, strategy: str) -> Node:
    if strategy == "concat_mlp":
        flat = ad.dense(ad.tanh(ad.dense(z, "dec.hidden")), "dec.out")
        return ad.reshape(flat, (n, T, W))
    if strategy == "projection":
        return ad.reshape(ad.dense(z, "dec.proj"), (n, T, W))
    if strategy == "vrae":
        init = ad.tanh(ad.dense(z, "dec.init"))
        h, c = init[:, :H], init[:, H:]
        states = []
        for _ in range(T):
            h, c = ad.lstm_step(z, h, c, "dec.lstm")
            states.append(ad.reshape(h, (n, 1, H)))
        hs = ad.reshape(ad.concat(states, axis=1), (n * T, H))
        return ad.reshape(ad.dense(hs, "dec.out"), (n, T, W))
    raise ValueError(f"unknown strategy {strategy!r}")


def mse_graph(m: Node, m_recon: Node) -> Node:
    d = m_recon - m
    return ad.mean(d * d)


def loss_graph(n: int, cfg: TrainConfig, strategy: str | None = None) -> Graph:
    """Training graph. Inputs: ``m`` (n, T, 2D) latent matrices, ``eps`` (n, G)."""
    strategy = strategy or cfg.strategy
    T, W, H = cfg.tracks, 2 * cfg.latent_dim, cfg.mfg_hidden_dim
    m = ad.var("m")
    mu, logvar = fuse_graph(m, n, T, W, H, strategy)
    z = bvae.reparameterize_graph(mu, logvar, ad.var("eps"), cfg.eps_scale)
    recon = mse_graph(m, unfuse_graph(z, n, T, W, H, strategy))
    kl = bvae.kl_graph(mu, logvar)
    return Graph(loss=recon + kl, recon=recon, kl=kl)


@lru_cache(maxsize=64)
def _fuse(n, T, W, H, strategy) -> Graph:
    mu, logvar = fuse_graph(ad.var("m"), n, T, W, H, strategy)
    return Graph(mu=mu, logvar=logvar)


@lru_cache(maxsize=64)
def _unfuse(n, T, W, H, strategy) -> Graph:
    return Graph(m=unfuse_graph(ad.var("z"), n, T, W, H, strategy))


@lru_cache(maxsize=1)
def _mse() -> Graph:
    return Graph(mse=mse_graph(ad.var("m"), ad.var("r")))


def _hidden(params: ParamStore) -> int:
    return params["enc.mu.W"].shape[0]


# --------------------------------------------------------------------------
# array API

def latent_matrix(latents: Sequence[TrackLatent]) -> np.ndarray:
    """Stack per-track latents into rows ``[mu || logvar]``: (T, 2D) or (n, T, 2D)."""
    rows = [np.concatenate([l.mu, l.logvar], axis=-1) for l in latents]
    return np.stack(rows, axis=-2)


def split_rows(m: np.ndarray) -> list[TrackLatent]:
    d = m.shape[-1] // 2
    return [TrackLatent(m[..., t, :d], m[..., t, d:]) for t in range(m.shape[-2])]


def fuse(m: np.ndarray, params: ParamStore) -> TrackLatent:
    """Latent matrix (T, 2D) or (n, T, 2D) -> global (mu, logvar)."""
    mb = np.asarray(m, dtype=np.float64)
    single = mb.ndim == 2
    mb = mb[None] if single else mb
    if mb.ndim != 3:
        raise ValueError(f"latent matrix must be (T, 2D) or (n, T, 2D), got {np.shape(m)}")
    strategy = strategy_of(params)
    n, T, W = mb.shape
    H = _hidden(params)
    if strategy == "vrae":
        ok = params["enc.lstm.W_i"].shape[0] == W + H
    else:
        ok = params["enc.hidden.W" if strategy == "concat_mlp" else "enc.proj.W"].shape[0] == T * W
    if not ok:
        raise ValueError(f"latent matrix shape {(T, W)} does not match the fusion parameters")
    out = _fuse(n, T, W, H, strategy).run({**params, "m": mb})
    if single:
        return TrackLatent(out["mu"][0], out["logvar"][0])
    return TrackLatent(out["mu"], out["logvar"])


def unfuse(z_g: np.ndarray, params: ParamStore, tracks: int, row_width: int) -> np.ndarray:
    """Global latent (G,) or (n, G) -> latent matrix (T, 2D) or (n, T, 2D)."""
    zb = np.asarray(z_g, dtype=np.float64)
    single = zb.ndim == 1
    zb = zb[None] if single else zb
    strategy = strategy_of(params)
    G = params["enc.mu.W"].shape[1]
    if zb.ndim != 2 or zb.shape[1] != G:
        raise ValueError(f"global latent must have length {G}, got shape {np.shape(z_g)}")
    out = _unfuse(zb.shape[0], tracks, row_width, _hidden(params), strategy).run({**params, "z": zb})["m"]
    return out[0] if single else out


def mfg_loss(m: np.ndarray, m_recon: np.ndarray, global_latent: TrackLatent) -> LossParts:
    m = np.asarray(m, dtype=np.float64)
    m_recon = np.asarray(m_recon, dtype=np.float64)
    if m.shape != m_recon.shape:
        raise ValueError(f"matrices {m.shape} and {m_recon.shape} differ")
    mse = float(_mse().run({"m": m, "r": m_recon})["mse"])
    return LossParts(mse, bvae.kl_divergence(global_latent.mu, global_latent.logvar))


# --------------------------------------------------------------------------
# full model

@dataclass
class Model:
    """Trained parameter groups: T BVAEs, T refine nets, one fusion VAE."""

    cfg: TrainConfig
    bvaes: list
    refines: list
    mfg: ParamStore | None = None

    def check(self, need_mfg: bool = True):
        T = self.cfg.tracks
        if len(self.bvaes) != T or any(p is None for p in self.bvaes):
            raise UntrainedError("missing BVAE parameters")
        if len(self.refines) != T or any(p is None for p in self.refines):
            raise UntrainedError("missing refine parameters")
        if need_mfg and self.mfg is None:
            raise UntrainedError("missing fusion VAE parameters (run stage 2)")


def encode_tracks(p: Pianoroll, model: Model) -> np.ndarray:
    """Per-track pre-sample latents stacked into a (T, 2D) matrix."""
    cfg = model.cfg
    if p.shape != cfg.shape:
        raise ValueError(f"pianoroll shape {p.shape} does not match configuration {cfg.shape}")
    labels = to_labels(p).cells.astype(np.float64).reshape(cfg.tracks, cfg.seq_len, cfg.pitches)
    return latent_matrix([bvae.encode(labels[t], model.bvaes[t]) for t in range(cfg.tracks)])


def decode_tracks(m: np.ndarray, model: Model, rng: Stream | None, eps_scale: float | None = None,
                  mode: str = "threshold", eps: np.ndarray | None = None) -> np.ndarray:
    """Shared tail of generation and restoration.

    Rows of ``m`` (n, T, 2D) are sampled with the BVAE reparameterisation
    (``eps`` (n, T, D) fixes the noise), decoded, refined and binarised.
    Returns cells of shape (n, T, B, S, P).
    """
    cfg = model.cfg
    eps_scale = cfg.eps_scale if eps_scale is None else eps_scale
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    out = np.empty((n, cfg.tracks, cfg.seq_len, cfg.pitches), dtype=np.int8)
    for t, latent in enumerate(split_rows(m)):
        noise = None if eps is None else eps[:, t, :]
        z = bvae.reparameterize(latent, eps_scale, rng, eps=noise)
        raw = bvae.decode(z, model.bvaes[t], cfg.seq_len)
        probs = refine.refine_forward(raw, model.refines[t], cfg.seq_len, cfg.pitches)
        out[:, t] = refine.binarize(probs, mode, rng)
    return out.reshape(n, *cfg.shape)


def generate(rng: Stream, model: Model, n: int = 1, mode: str = "threshold") -> list[Pianoroll]:
    """Sample z_g ~ N(0, I), rebuild per-track latents, then run the shared tail."""
    model.check()
    cfg = model.cfg
    z_g = rng.normal((n, cfg.global_latent_dim))
    m = unfuse(z_g, model.mfg, cfg.tracks, 2 * cfg.latent_dim)
    cells = decode_tracks(m, model, rng, mode=mode)
    return [Pianoroll(c, cfg.track_names) for c in cells]


def restore(p_in: Pianoroll, model: Model, rng: Stream, mode: str = "threshold") -> Pianoroll:
    """Encode a piece through both levels and decode it back (adaptation path)."""
    model.check()
    cfg = model.cfg
    m = encode_tracks(p_in, model)
    g = fuse(m, model.mfg)
    z_g = bvae.reparameterize(g, cfg.eps_scale, rng)
    m_rec = unfuse(z_g[None], model.mfg, cfg.tracks, 2 * cfg.latent_dim)
    cells = decode_tracks(m_rec, model, rng, mode=mode)
    return Pianoroll(cells[0], p_in.track_names)


def generate_unfused(rng: Stream, model: Model, n: int = 1, mode: str = "threshold") -> list[Pianoroll]:
    """Each track decoded from its own z ~ N(0, I); no fusion level involved."""
    model.check(need_mfg=False)
    cfg = model.cfg
    out = np.empty((n, cfg.tracks, cfg.seq_len, cfg.pitches), dtype=np.int8)
    for t in range(cfg.tracks):
        z = rng.normal((n, cfg.latent_dim))
        raw = bvae.decode(z, model.bvaes[t], cfg.seq_len)
        out[:, t] = refine.binarize(refine.refine_forward(raw, model.refines[t]), mode, rng)
    return [Pianoroll(c.reshape(cfg.shape), cfg.track_names) for c in out]
