"""Command-line pipeline: ingest, train, generate, restore, eval, render.

Every subcommand is deterministic given its flags. Exit status is 0 only
when the requested artifact was fully written.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import metrics, mfgvae, pianoroll, smf, trainer
from .config import ConfigError, TrainConfig, parse_pairs
from .rng import Stream

SMF_SUFFIXES = (".mid", ".midi", ".smf")


class CLIError(RuntimeError):
    pass


def _shape(text: str) -> tuple[int, int, int, int]:
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected TxBxSxP") from None
    if len(dims) != 4 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected four positive sizes TxBxSxP")
    return dims


def _track_map(text: str) -> dict[int, int]:
    """``"0:0,1:1,9:1"`` -> source track (or channel, for format 0) -> pianoroll track."""
    out = {}
    try:
        for item in filter(None, (s.strip() for s in text.split(","))):
            src, dest = item.split(":")
            out[int(src)] = int(dest)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad track mapping {text!r}, expected SRC:DEST,...") from None
    return out


def _inputs(path: Path, suffixes) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in suffixes)
    if path.is_file():
        return [path]
    raise CLIError(f"cannot read {path}")


def _corpus(path: Path) -> list[pianoroll.Pianoroll]:
    files = _inputs(path, (".pr1",))
    if not files:
        raise CLIError("no input pieces")
    return [pianoroll.load(f) for f in files]


# --------------------------------------------------------------------------
# subcommands

def cmd_ingest(args) -> int:
    T, B, S, P = args.shape
    names = tuple(args.names.split(",")) if args.names else TrainConfig().with_overrides({"tracks": str(T)}).track_names
    files = _inputs(Path(args.inp), SMF_SUFFIXES)
    if not files:
        raise CLIError("no input pieces")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = placed = dropped = 0
    for f in files:
        try:
            events, tpb = smf.parse_smf(f.read_bytes())
        except (smf.SMFError, OSError) as exc:
            print(f"warning: skipping {f.name}: {exc}", file=sys.stderr)
            continue
        res = smf.quantize(events, tpb, tracks=T, bars=B, steps_per_bar=S, pitches=P,
                           pitch_lo=args.pitch_lo, beats_per_bar=args.beats_per_bar,
                           track_map=args.tracks, track_names=names)
        pianoroll.save(res.pianoroll, out_dir / f"{f.stem}.pr1")
        written += 1
        placed += res.placed
        dropped += res.dropped
    if not written:
        raise CLIError("no input pieces could be read")
    print(f"pieces {written} placed {placed} dropped {dropped}")
    return 0


def _config(args, base: TrainConfig | None = None) -> TrainConfig:
    cfg = base or TrainConfig()
    if args.config:
        cfg = cfg.with_overrides(parse_pairs(Path(args.config).read_text()))
    pairs = {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    return cfg.with_overrides(pairs) if pairs else cfg


def cmd_train(args) -> int:
    corpus = _corpus(Path(args.corpus))
    if args.stage == "2":
        if not args.ckpt:
            raise CLIError("stage 2 needs a stage-1 checkpoint (--ckpt)")
        stored = trainer.read_checkpoint(args.ckpt)
        cfg = _config(args, stored.cfg)
        stage1 = trainer.load_checkpoint(Path(args.ckpt).read_bytes(), expected=cfg)
        stage1.check(need_mfg=False)
        mfg, log_ = trainer.train_stage2(corpus, stage1, cfg)
        model = mfgvae.Model(cfg, stage1.bvaes, stage1.refines, mfg)
    else:
        cfg = _config(args)
        if args.stage == "1":
            s1 = trainer.train_stage1(corpus, cfg)
            model, log_ = mfgvae.Model(cfg, s1.bvaes, s1.refines), s1.log
        else:
            model, log_ = trainer.train_all(corpus, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trainer.write_checkpoint(model, out)
    log_path = Path(args.log) if args.log else out.with_suffix(".loss.csv")
    log_path.write_text(log_.to_csv())
    print(f"wrote {out} and {log_path}")
    return 0


def cmd_generate(args) -> int:
    if args.n < 1:
        raise CLIError("--n must be positive")
    model = trainer.read_checkpoint(args.ckpt)
    pieces = mfgvae.generate(Stream(args.seed, "generate"), model, args.n, mode=args.mode)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(pieces):
        pianoroll.save(p, out_dir / f"gen_{i:04d}.pr1")
    print(f"wrote {len(pieces)} pieces to {out_dir}")
    return 0


def cmd_restore(args) -> int:
    model = trainer.read_checkpoint(args.ckpt)
    piece = pianoroll.load(args.inp)
    restored = mfgvae.restore(piece, model, Stream(args.seed, "restore"), mode=args.mode)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    pianoroll.save(restored, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    corpus = _corpus(Path(args.inp))
    mcfg = metrics.MetricsConfig(pitch_lo=args.pitch_lo, qn_threshold=args.qn_threshold,
                                 dp_grids=tuple(args.dp_grid), drum_name=args.drum_name)
    report = metrics.evaluate(corpus, mcfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(report.to_csv())
    sys.stdout.write(report.to_text())
    return 0


def cmd_render(args) -> int:
    piece = pianoroll.load(args.inp)
    image = pianoroll.render_pgm(piece, args.track)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_bytes(image)
    print(f"wrote {args.out}")
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trackfusion", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="quantise MIDI files into .pr1 pianorolls")
    p.add_argument("--in", dest="inp", required=True, help="SMF file or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--shape", type=_shape, default=(5, 4, 16, 24), help="TxBxSxP (default 5x4x16x24)")
    p.add_argument("--tracks", type=_track_map, default=None,
                   help="SRC:DEST pairs, e.g. 0:0,9:1 (default identity)")
    p.add_argument("--names", default=None, help="comma-separated output track names")
    p.add_argument("--pitch-lo", type=int, default=48, help="MIDI pitch of the lowest row")
    p.add_argument("--beats-per-bar", type=int, default=4)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train stage 1, stage 2 or both")
    p.add_argument("--stage", choices=("1", "2", "all"), default="all")
    p.add_argument("--corpus", required=True, help="directory of .pr1 files")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--ckpt", default=None, help="stage-1 checkpoint (stage 2 only)")
    p.add_argument("--log", default=None, help="loss CSV path (default <out>.loss.csv)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample new pieces from the prior")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=("threshold", "sample"), default="threshold")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("restore", help="reconstruct a piece through both levels")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True, help=".pr1 file")
    p.add_argument("--out", required=True, help="output .pr1 file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("threshold", "sample"), default="threshold")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="objective metrics over a corpus")
    p.add_argument("--in", dest="inp", required=True, help=".pr1 file or directory")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--pitch-lo", type=int, default=48)
    p.add_argument("--qn-threshold", type=int, default=3)
    p.add_argument("--dp-grid", type=int, nargs="+", default=[8])
    p.add_argument("--drum-name", default="drums")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="draw one track as a PGM image")
    p.add_argument("--in", dest="inp", required=True, help=".pr1 file")
    p.add_argument("--track", type=int, required=True)
    p.add_argument("--out", required=True, help="PGM path")
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CLIError, ValueError, OSError, IndexError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
