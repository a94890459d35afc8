"""Training configuration and its canonical ``key=value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

STRATEGIES = ("concat_mlp", "projection", "vrae")
GRANULARITIES = ("note", "bar")
DEFAULT_TRACKS = ("bass", "drums", "guitar", "strings", "piano")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # pianoroll shape
    tracks: int = 5
    bars: int = 4
    steps_per_bar: int = 16
    pitches: int = 24
    pitch_lo: int = 48
    track_names: tuple = DEFAULT_TRACKS

    # BVAE
    latent_dim: int = 64
    intermediate_dim: int = 128
    eps_scale: float = 0.01
    shared_bvae: bool = False

    # refine
    refine_units: int = 2
    refine_channels: int = 4
    refine_granularity: str = "note"

    # MFG-VAE
    strategy: str = "vrae"
    global_latent_dim: int = 128
    mfg_hidden_dim: int = 128

    # optimisation
    batch_size: int = 32
    learning_rate: float = 1e-3
    epochs_stage1: int = 20
    epochs_refine: int = 20
    epochs_stage2: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "track_names", tuple(self.track_names))
        self.validate()

    def validate(self):
        for name in ("tracks", "bars", "steps_per_bar", "pitches", "latent_dim", "intermediate_dim",
                     "refine_channels", "global_latent_dim", "mfg_hidden_dim", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("refine_units", "epochs_stage1", "epochs_refine", "epochs_stage2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.eps_scale <= 0:
            raise ConfigError("eps_scale must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.refine_granularity not in GRANULARITIES:
            raise ConfigError(f"unknown refine_granularity {self.refine_granularity!r}")
        if len(self.track_names) != self.tracks:
            raise ConfigError(f"{len(self.track_names)} track names for {self.tracks} tracks")
        if not (0 <= self.pitch_lo and self.pitch_lo + self.pitches <= 128):
            raise ConfigError("pitch window must lie within MIDI 0..127")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.tracks, self.bars, self.steps_per_bar, self.pitches)

    @property
    def seq_len(self) -> int:
        return self.bars * self.steps_per_bar

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    # -- canonical text ---------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            lines.append(f"{f.name}={_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        return (base or cls()).with_overrides(parse_pairs(text))

    def with_overrides(self, pairs: dict[str, str]) -> "TrainConfig":
        known = {f.name: f for f in fields(self)}
        changes = {}
        for key, raw in pairs.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _parse(getattr(self, key), raw, key)
        if "track_names" not in changes and "tracks" in changes and changes["tracks"] != self.tracks:
            changes["track_names"] = _default_names(changes["tracks"])
        return self.replace(**changes)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())


def _default_names(n: int) -> tuple:
    if n <= len(DEFAULT_TRACKS):
        return DEFAULT_TRACKS[:n]
    return DEFAULT_TRACKS + tuple(f"track{i}" for i in range(len(DEFAULT_TRACKS), n))


def parse_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(current, raw: str, key: str):
    try:
        if isinstance(current, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(s.strip() for s in raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def toy_config(**changes) -> TrainConfig:
    """Small shapes for tests and quick experiments."""
    base = dict(tracks=2, bars=1, steps_per_bar=4, pitches=4, track_names=("bass", "drums"),
                latent_dim=4, intermediate_dim=6, global_latent_dim=4, mfg_hidden_dim=6,
                refine_channels=2, batch_size=4)
    base.update(changes)
    return TrainConfig(**base)
