"""Per-track recurrent VAE (LSTM encoder/decoder) and its loss.

Each track owns one :class:`~trackfusion.params.ParamStore`. Graph builders
(``*_graph``) produce nodes for training; the plain functions evaluate the
same graphs on arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Node
from .config import TrainConfig
from .params import ParamStore
from .rng import Stream

PROB_FLOOR = 1e-7


@dataclass
class TrackLatent:
    """Encoder outputs before sampling: mean and log-variance, shape (..., latent_dim)."""

    mu: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.logvar = np.asarray(self.logvar, dtype=np.float64)
        if self.mu.shape != self.logvar.shape:
            raise ValueError(f"mu {self.mu.shape} and logvar {self.logvar.shape} differ")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.logvar))):
            raise ValueError("non-finite latent")

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


@dataclass
class LossParts:
    recon: float
    kl: float

    @property
    def total(self) -> float:
        return self.recon + self.kl


def param_shapes(cfg: TrainConfig) -> dict[str, tuple]:
    P, H, D = cfg.pitches, cfg.intermediate_dim, cfg.latent_dim
    shapes = {}
    shapes.update(ad.lstm_shapes("enc.lstm", P, H))
    shapes.update(ad.dense_shapes("enc.mu", H, D))
    shapes.update(ad.dense_shapes("enc.logvar", H, D))
    shapes.update(ad.dense_shapes("dec.init", D, 2 * H))
    shapes.update(ad.lstm_shapes("dec.lstm", D, H))
    shapes.update(ad.dense_shapes("dec.out", H, P))
    return shapes


def init_params(cfg: TrainConfig, track: int) -> ParamStore:
    return ParamStore.initialise(param_shapes(cfg), cfg.seed, prefix=f"bvae{track}/")


# --------------------------------------------------------------------------
# graph builders

def encoder_graph(x: Node, n: int, seq_len: int, hidden: int) -> tuple[Node, Node]:
    """LSTM over ``x`` (n, seq_len, P); final hidden state -> (mu, logvar)."""
    h = c = ad.const(np.zeros((n, hidden)))
    for t in range(seq_len):
        h, c = ad.lstm_step(x[:, t, :], h, c, "enc.lstm")
    return ad.dense(h, "enc.mu"), ad.dense(h, "enc.logvar")


def decoder_graph(z: Node, n: int, seq_len: int, hidden: int, pitches: int) -> Node:
    """Latent -> initial (h, c); ``z`` is also fed as input at every step.

    Returns raw (pre-sigmoid) outputs of shape (n, seq_len, pitches).
    """
    init = ad.tanh(ad.dense(z, "dec.init"))
    h, c = init[:, :hidden], init[:, hidden:]
    states = []
    for _ in range(seq_len):
        h, c = ad.lstm_step(z, h, c, "dec.lstm")
        states.append(ad.reshape(h, (n, 1, hidden)))
    hs = ad.reshape(ad.concat(states, axis=1), (n * seq_len, hidden))
    return ad.reshape(ad.dense(hs, "dec.out"), (n, seq_len, pitches))


def reparameterize_graph(mu: Node, logvar: Node, eps: Node, eps_scale: float) -> Node:
    """z = mu + exp(logvar / 2) * (eps_scale * eps); eps is a bound constant."""
    return mu + ad.exp(logvar * 0.5) * (eps * eps_scale)


def kl_graph(mu: Node, logvar: Node) -> Node:
    """Batch mean of -1/2 sum(1 + logvar - mu^2 - exp(logvar))."""
    per_dim = 1.0 + logvar - mu * mu - ad.exp(logvar)
    return ad.mean(ad.sum_(per_dim, axis=-1)) * -0.5


def clamp_prob(p: Node) -> Node:
    """Affine squash of (0, 1) onto [PROB_FLOOR, 1 - PROB_FLOOR] so log never sees 0."""
    return p * (1.0 - 2 * PROB_FLOOR) + PROB_FLOOR


def cell_bce_graph(y: Node, prob: Node) -> Node:
    """Elementwise binary cross-entropy with clamped probabilities."""
    p = clamp_prob(prob)
    return -(y * ad.log(p) + (1.0 - y) * ad.log(1.0 - p))


def logit_bce_graph(y: Node, logits: Node) -> Node:
    """:func:`cell_bce_graph` of ``sigmoid(logits)`` with ``1 - p`` taken as ``sigmoid(-logits)``.

    Same value in exact arithmetic; avoids the cancellation in ``1 - p`` when
    the sigmoid saturates.
    """
    p = clamp_prob(ad.sigmoid(logits))
    q = clamp_prob(ad.sigmoid(-logits))
    return -(y * ad.log(p) + (1.0 - y) * ad.log(q))


def recon_graph(x: Node, logits: Node) -> Node:
    """BCE of sigmoid(logits) summed over cells, averaged over the batch."""
    per_cell = logit_bce_graph(x, logits)
    return ad.mean(ad.sum_(ad.sum_(per_cell, axis=-1), axis=-1))


def loss_graph(n: int, cfg: TrainConfig) -> Graph:
    """Training graph. Inputs: ``x`` (n, L, P) labels, ``eps`` (n, latent_dim)."""
    L, H, P = cfg.seq_len, cfg.intermediate_dim, cfg.pitches
    mu, logvar = encoder_graph(ad.var("x"), n, L, H)
    z = reparameterize_graph(mu, logvar, ad.var("eps"), cfg.eps_scale)
    logits = decoder_graph(z, n, L, H, P)
    recon = recon_graph(ad.var("x"), logits)
    kl = kl_graph(mu, logvar)
    return Graph(loss=recon + kl, recon=recon, kl=kl)


@lru_cache(maxsize=64)
def _encoder(n: int, L: int, H: int) -> Graph:
    mu, logvar = encoder_graph(ad.var("x"), n, L, H)
    return Graph(mu=mu, logvar=logvar)


@lru_cache(maxsize=64)
def _decoder(n: int, L: int, H: int, P: int) -> Graph:
    return Graph(out=decoder_graph(ad.var("z"), n, L, H, P))


@lru_cache(maxsize=16)
def _loss_eval() -> Graph:
    x, logits, mu, logvar = (ad.var(k) for k in ("x", "logits", "mu", "logvar"))
    return Graph(recon=recon_graph(x, logits), kl=kl_graph(mu, logvar))


# --------------------------------------------------------------------------
# array API

def _batched(a: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == ndim - 1:
        return a[None], True
    if a.ndim != ndim:
        raise ValueError(f"expected {ndim - 1}-D or batched {ndim}-D input, got shape {a.shape}")
    return a, False


def _hidden(params: ParamStore) -> int:
    return params["enc.mu.W"].shape[0]


def encode(x: np.ndarray, params: ParamStore) -> TrackLatent:
    """Encode label sequences (L, P) or (n, L, P) to their pre-sample latent."""
    xb, single = _batched(x, 3)
    n, L, P = xb.shape
    H = _hidden(params)
    if params["enc.lstm.W_i"].shape[0] != P + H:
        raise ValueError(f"input has {P} pitches, encoder expects {params['enc.lstm.W_i'].shape[0] - H}")
    out = _encoder(n, L, H).run({**params, "x": xb})
    if single:
        return TrackLatent(out["mu"][0], out["logvar"][0])
    return TrackLatent(out["mu"], out["logvar"])


def decode(z: np.ndarray, params: ParamStore, seq_len: int) -> np.ndarray:
    """Decode latents (D,) or (n, D) into raw outputs (L, P) or (n, L, P)."""
    zb, single = _batched(z, 2)
    D = params["dec.init.W"].shape[0]
    if zb.shape[1] != D:
        raise ValueError(f"latent has length {zb.shape[1]}, decoder expects {D}")
    H = _hidden(params)
    P = params["dec.out.W"].shape[1]
    out = _decoder(zb.shape[0], seq_len, H, P).run({**params, "z": zb})["out"]
    return out[0] if single else out


def reparameterize(latent: TrackLatent, eps_scale: float, rng: Stream | None = None,
                   eps: np.ndarray | None = None) -> np.ndarray:
    """Sample ``mu + exp(logvar / 2) * eps_scale * eps`` with eps ~ N(0, 1).

    Pass ``eps`` to fix the noise (e.g. zeros for the mean).
    """
    if eps is None:
        if rng is None:
            raise ValueError("need an rng or explicit eps")
        eps = rng.normal(latent.mu.shape)
    return latent.mu + np.exp(latent.logvar / 2.0) * (eps_scale * np.asarray(eps, dtype=np.float64))


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> float:
    out = _loss_eval().outputs["kl"]
    return float(ad.forward(out, {"mu": np.atleast_2d(mu), "logvar": np.atleast_2d(logvar)})) + 0.0  # no -0.0


def bvae_loss(x: np.ndarray, x_recon: np.ndarray, latent: TrackLatent) -> LossParts:
    """Reconstruction BCE (on sigmoid of raw output, summed over cells) plus KL.

    Both terms are averaged over the batch when inputs are batched.
    """
    xb, _ = _batched(x, 3)
    rb, _ = _batched(x_recon, 3)
    if xb.shape != rb.shape:
        raise ValueError(f"x {xb.shape} and reconstruction {rb.shape} differ")
    out = _loss_eval().run({"x": xb, "logits": rb, "mu": np.atleast_2d(latent.mu),
                            "logvar": np.atleast_2d(latent.logvar)})
    return LossParts(float(out["recon"]), float(out["kl"]))
