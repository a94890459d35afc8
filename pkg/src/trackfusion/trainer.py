"""Two-stage training: per-track BVAEs and refine nets first, then the fusion VAE.

Stage 2 only reads stage-1 parameters; :func:`train_stage2` verifies their
digests before returning.
"""
from __future__ import annotations

import csv
import io
import logging
import struct
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import bvae, mfgvae, refine
from .config import TrainConfig
from .mfgvae import Model
from .params import ParamStore
from .pianoroll import Pianoroll
from .rng import Stream

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


# --------------------------------------------------------------------------
# optimiser

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParamStore, grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float) -> tuple[ParamStore, AdamState]:
    """One Adam update (beta1 0.9, beta2 0.999, eps 1e-8). Inputs are not mutated."""
    t = state.t + 1
    new_params = params.copy()
    m, v = dict(state.m), dict(state.v)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m[name] = ADAM_BETA1 * m.get(name, 0.0) + (1 - ADAM_BETA1) * g
        v[name] = ADAM_BETA2 * v.get(name, 0.0) + (1 - ADAM_BETA2) * g * g
        m_hat = m[name] / (1 - ADAM_BETA1 ** t)
        v_hat = v[name] / (1 - ADAM_BETA2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new_params, AdamState(m, v, t)


# --------------------------------------------------------------------------
# loss log

@dataclass
class LossLog:
    rows: list = field(default_factory=list)

    def add(self, stage: str, epoch: int, component: str, value: float):
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss {component}={value} at stage {stage} epoch {epoch}")
        self.rows.append((str(stage), int(epoch), component, float(value)))

    def extend(self, other: "LossLog"):
        self.rows.extend(other.rows)

    def series(self, component: str, stage: str | None = None) -> list[float]:
        return [r[3] for r in self.rows if r[2] == component and (stage is None or r[0] == stage)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "epoch", "component", "value"])
        for stage, epoch, comp, value in self.rows:
            w.writerow([stage, epoch, comp, repr(value)])
        return buf.getvalue()


# --------------------------------------------------------------------------
# data helpers

def corpus_labels(corpus, cfg: TrainConfig) -> np.ndarray:
    """Corpus -> float label array (N, T, L, P)."""
    if isinstance(corpus, np.ndarray):
        cells = corpus
    else:
        cells = np.stack([p.cells for p in corpus]) if len(corpus) else np.empty((0,) + cfg.shape)
    if cells.shape[0] == 0:
        raise TrainingError("empty corpus")
    if cells.shape[1:] != cfg.shape:
        raise TrainingError(f"corpus shape {cells.shape[1:]} does not match configuration {cfg.shape}")
    return ((cells.astype(np.float64) + 1) / 2).reshape(cells.shape[0], cfg.tracks, cfg.seq_len, cfg.pitches)


def _batches(n: int, size: int, rng: Stream):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


@lru_cache(maxsize=32)
def _bvae_graph(n: int, cfg: TrainConfig):
    return bvae.loss_graph(n, cfg)


@lru_cache(maxsize=64)
def _refine_graph(n: int, cfg: TrainConfig):
    return refine.masked_bce_graph(n, cfg)


@lru_cache(maxsize=32)
def _mfg_graph(n: int, cfg: TrainConfig):
    return mfgvae.loss_graph(n, cfg)


def _step(graph, params: ParamStore, data: dict, state: AdamState, lr: float):
    out = graph.run({**params, **data})
    grads = ad.backward(graph["loss"])
    params, state = adam_step(params, grads, state, lr)
    return params, state, out


# --------------------------------------------------------------------------
# stage 1

def train_bvae(x: np.ndarray, cfg: TrainConfig, params: ParamStore, rng: Stream, log_: LossLog,
               tag: str) -> ParamStore:
    """Mini-batch Adam on the BVAE loss for one track's data ``x`` (N, L, P)."""
    state = AdamState()
    for epoch in range(cfg.epochs_stage1):
        sums = np.zeros(3)
        for idx in _batches(len(x), cfg.batch_size, rng):
            eps = rng.normal((len(idx), cfg.latent_dim))
            params, state, out = _step(_bvae_graph(len(idx), cfg), params, {"x": x[idx], "eps": eps},
                                       state, cfg.learning_rate)
            sums += len(idx) * np.array([out["recon"], out["kl"], out["loss"]], dtype=float)
        sums /= len(x)
        log_.add("1", epoch, f"{tag}.recon", sums[0])
        log_.add("1", epoch, f"{tag}.kl", sums[1])
        log_.add("1", epoch, f"{tag}.total", sums[2])
        log.info("stage 1 %s epoch %d: recon %.4f kl %.4f", tag, epoch, sums[0], sums[1])
    return params


def refine_examples(n_pieces: int, cfg: TrainConfig, granularity: str) -> list[tuple[int, slice]]:
    """Training examples as (piece, timestep rows). A note example is one
    timestep's pitch vector; a bar example is a whole bar of them."""
    if granularity == "note":
        return [(i, slice(s, s + 1)) for i in range(n_pieces) for s in range(cfg.seq_len)]
    if granularity == "bar":
        S = cfg.steps_per_bar
        return [(i, slice(b * S, (b + 1) * S)) for i in range(n_pieces) for b in range(cfg.bars)]
    raise ValueError(f"unknown granularity {granularity!r}")


def train_refine(raw: np.ndarray, y: np.ndarray, cfg: TrainConfig, params: ParamStore, rng: Stream,
                 log_: LossLog | None = None, tag: str = "refine", epochs: int | None = None,
                 granularity: str | None = None) -> ParamStore:
    """Fit a refine net mapping raw decoder output (N, L, P) to labels ``y``.

    Each mini-batch holds ``batch_size`` examples at the chosen granularity;
    the loss is the per-example BCE averaged over the batch.
    """
    granularity = granularity or cfg.refine_granularity
    epochs = cfg.epochs_refine if epochs is None else epochs
    examples = refine_examples(len(raw), cfg, granularity)
    label_dim = cfg.pitches * (1 if granularity == "note" else cfg.steps_per_bar)
    state = AdamState()
    for epoch in range(epochs):
        total = 0.0
        for idx in _batches(len(examples), cfg.batch_size, rng):
            chosen = [examples[i] for i in idx]
            pieces = sorted({piece for piece, _ in chosen})
            row_of = {piece: k for k, piece in enumerate(pieces)}
            mask = np.zeros((len(pieces), cfg.seq_len, cfg.pitches))
            for piece, rows in chosen:
                mask[row_of[piece], rows, :] += 1.0
            data = {"raw": raw[pieces], "y": y[pieces], "mask": mask,
                    "inv_count": np.array(1.0 / (len(chosen) * label_dim))}
            params, state, out = _step(_refine_graph(len(pieces), cfg), params, data, state, cfg.learning_rate)
            total += float(out["loss"]) * len(chosen)
        if log_ is not None:
            log_.add("1", epoch, f"{tag}.refine_bce", total / len(examples))
    return params


def raw_outputs(x: np.ndarray, params: ParamStore, cfg: TrainConfig, rng: Stream) -> np.ndarray:
    """Decoder output for the reparameterised encoding of ``x`` (N, L, P)."""
    latent = bvae.encode(x, params)
    z = bvae.reparameterize(latent, cfg.eps_scale, rng)
    return bvae.decode(z, params, cfg.seq_len)


@dataclass
class Stage1Result:
    bvaes: list
    refines: list
    log: LossLog


def train_stage1(corpus, cfg: TrainConfig) -> Stage1Result:
    labels = corpus_labels(corpus, cfg)
    log_ = LossLog()
    T = cfg.tracks
    if cfg.shared_bvae:
        x = labels.transpose(1, 0, 2, 3).reshape(-1, cfg.seq_len, cfg.pitches)
        rng = Stream(cfg.seed, "stage1/shared")
        p = train_bvae(x, cfg, bvae.init_params(cfg, 0), rng, log_, "shared")
        raw = raw_outputs(x, p, cfg, rng)
        r = train_refine(raw, x, cfg, refine.init_params(cfg, 0), rng, log_, "shared")
        return Stage1Result([p] * T, [r] * T, log_)
    bvaes, refines = [], []
    for t in range(T):
        rng = Stream(cfg.seed, f"stage1/track{t}")
        x = labels[:, t]
        p = train_bvae(x, cfg, bvae.init_params(cfg, t), rng, log_, f"track{t}")
        # refine trains against the labels with this track's BVAE frozen
        raw = raw_outputs(x, p, cfg, rng)
        r = train_refine(raw, x, cfg, refine.init_params(cfg, t), rng, log_, f"track{t}")
        bvaes.append(p)
        refines.append(r)
    return Stage1Result(bvaes, refines, log_)


# --------------------------------------------------------------------------
# stage 2

def latent_matrices(labels: np.ndarray, bvaes: Sequence[ParamStore]) -> np.ndarray:
    """Frozen encoders' pre-sample latents for every piece: (N, T, 2D)."""
    lats = [bvae.encode(labels[:, t], bvaes[t]) for t in range(labels.shape[1])]
    return mfgvae.latent_matrix(lats)


def train_stage2(corpus, stage1: Stage1Result | Model, cfg: TrainConfig) -> tuple[ParamStore, LossLog]:
    if stage1 is None or not stage1.bvaes or any(p is None for p in stage1.bvaes):
        raise TrainingError("stage 2 needs trained stage-1 parameters")
    labels = corpus_labels(corpus, cfg)
    frozen = [p.digest() for p in list(stage1.bvaes) + list(stage1.refines)]
    m = latent_matrices(labels, stage1.bvaes)
    rng = Stream(cfg.seed, "stage2")
    params = mfgvae.init_params(cfg)
    state = AdamState()
    log_ = LossLog()
    for epoch in range(cfg.epochs_stage2):
        sums = np.zeros(3)
        for idx in _batches(len(m), cfg.batch_size, rng):
            eps = rng.normal((len(idx), cfg.global_latent_dim))
            params, state, out = _step(_mfg_graph(len(idx), cfg), params, {"m": m[idx], "eps": eps},
                                       state, cfg.learning_rate)
            sums += len(idx) * np.array([out["recon"], out["kl"], out["loss"]], dtype=float)
        sums /= len(m)
        log_.add("2", epoch, "mfg.recon", sums[0])
        log_.add("2", epoch, "mfg.kl", sums[1])
        log_.add("2", epoch, "mfg.total", sums[2])
        log.info("stage 2 epoch %d: recon %.5f kl %.5f", epoch, sums[0], sums[1])
    if [p.digest() for p in list(stage1.bvaes) + list(stage1.refines)] != frozen:
        raise TrainingError("stage-1 parameters changed during stage 2")
    return params, log_


def train_all(corpus, cfg: TrainConfig) -> tuple[Model, LossLog]:
    s1 = train_stage1(corpus, cfg)
    mfg, log2 = train_stage2(corpus, s1, cfg)
    log_ = LossLog()
    log_.extend(s1.log)
    log_.extend(log2)
    return Model(cfg, s1.bvaes, s1.refines, mfg), log_


# --------------------------------------------------------------------------
# checkpoints
#
#   "MSW2" | u8 version | u32 len, config text (key=value lines)
#   u32 tensor count, then per tensor:
#     u16 len, name | u32 rank | u32 dims... | f64 data | u32 CRC32 of data
#   u32 CRC32 of every preceding byte
# Integers and floats are little-endian.

CKPT_MAGIC = b"MSW2"
CKPT_VERSION = 1
# fields that change parameter shapes; a mismatch on these makes a checkpoint unusable
ARCH_FIELDS = ("tracks", "bars", "steps_per_bar", "pitches", "latent_dim", "intermediate_dim",
               "refine_units", "refine_channels", "strategy", "global_latent_dim", "mfg_hidden_dim")


def _model_tensors(model: Model) -> list[tuple[str, np.ndarray]]:
    out = []
    for group, stores in (("bvae", model.bvaes), ("refine", model.refines)):
        for t, store in enumerate(stores):
            out.extend((f"{group}.{t}/{k}", v) for k, v in store.items())
    if model.mfg is not None:
        out.extend((f"mfg/{k}", v) for k, v in model.mfg.items())
    return out


def save_checkpoint(model: Model) -> bytes:
    buf = bytearray(CKPT_MAGIC)
    cfg_text = model.cfg.to_text().encode("utf-8")
    buf += struct.pack("<BI", CKPT_VERSION, len(cfg_text)) + cfg_text
    tensors = _model_tensors(model)
    buf += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        raw_name = name.encode("utf-8")
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        buf += struct.pack("<H", len(raw_name)) + raw_name
        buf += struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
        buf += data + struct.pack("<I", zlib.crc32(data))
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(data: bytes, expected: TrainConfig | None = None) -> Model:
    """Parse checkpoint bytes; ``expected`` must agree on every architecture field."""
    data = bytes(data)
    if data[:4] != CKPT_MAGIC:
        raise CheckpointError("bad magic")
    if len(data) < 13:
        raise CheckpointError("truncated checkpoint")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError("checksum mismatch")
    r = _Reader(data[:-4])
    r.take(4)
    version, cfg_len = r.unpack("<BI")
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    cfg = TrainConfig.from_text(r.take(cfg_len).decode("utf-8"))
    if expected is not None:
        diff = [f for f in ARCH_FIELDS if getattr(cfg, f) != getattr(expected, f)]
        if diff:
            raise CheckpointError(f"config mismatch on {', '.join(diff)}")
    (count,) = r.unpack("<I")
    groups: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}I")
        raw = r.take(8 * int(np.prod(shape, dtype=np.int64)))
        (tcrc,) = r.unpack("<I")
        if zlib.crc32(raw) != tcrc:
            raise CheckpointError(f"checksum mismatch in tensor {name}")
        group, key = name.split("/", 1)
        groups.setdefault(group, {})[key] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after tensors")
    T = cfg.tracks
    bvaes = [ParamStore(groups[f"bvae.{t}"]) if f"bvae.{t}" in groups else None for t in range(T)]
    refines = [ParamStore(groups[f"refine.{t}"]) if f"refine.{t}" in groups else None for t in range(T)]
    mfg = ParamStore(groups["mfg"]) if "mfg" in groups else None
    return Model(cfg, bvaes, refines, mfg)


def write_checkpoint(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_checkpoint(model))


def read_checkpoint(path, expected: TrainConfig | None = None) -> Model:
    with open(path, "rb") as fh:
        return load_checkpoint(fh.read(), expected)
