import numpy as np
import pytest

from trackfusion import pianoroll
from trackfusion.cli import main
from trackfusion.pianoroll import Pianoroll
from trackfusion.smf import write_smf

CONFIG = """tracks=2
track_names=bass,drums
bars=1
steps_per_bar=4
pitches=12
latent_dim=4
intermediate_dim=6
global_latent_dim=4
mfg_hidden_dim=6
refine_channels=2
batch_size=2
learning_rate=0.01
epochs_stage1=3
epochs_refine=2
epochs_stage2=3
"""


def _write_midis(d, n=3):
    d.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        bass = [(480 * k, 480, 48 + (i + 2 * k) % 12, 90) for k in range(4)]
        drums = [(240 * k, 120, 50, 100) for k in range(8)]
        (d / f"p{i}.mid").write_bytes(write_smf([bass, drums]))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Ingested corpus plus a trained checkpoint, shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    _write_midis(root / "mid")
    assert main(["ingest", "--in", str(root / "mid"), "--out", str(root / "pr"), "--shape", "2x1x4x12",
                 "--names", "bass,drums"]) == 0
    (root / "cfg.txt").write_text(CONFIG)
    assert main(["train", "--corpus", str(root / "pr"), "--config", str(root / "cfg.txt"),
                 "--out", str(root / "m.ckpt1"), "--seed", "3"]) == 0
    return root


def test_ingest_writes_one_file_per_piece(workspace, capsys):
    files = sorted((workspace / "pr").glob("*.pr1"))
    assert [f.name for f in files] == ["p0.pr1", "p1.pr1", "p2.pr1"]
    p = pianoroll.load(files[0])
    assert p.shape == (2, 1, 4, 12) and p.track_names == ("bass", "drums")
    assert (p.cells == 1).any()


def test_ingest_empty_dir_fails(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["ingest", "--in", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) != 0
    assert "no input pieces" in capsys.readouterr().err


def test_ingest_skips_malformed_file(tmp_path, capsys):
    _write_midis(tmp_path / "mid", n=1)
    (tmp_path / "mid" / "bad.mid").write_bytes(b"MThd\x00\x00")
    assert main(["ingest", "--in", str(tmp_path / "mid"), "--out", str(tmp_path / "o"),
                 "--shape", "2x1x4x12"]) == 0
    out = capsys.readouterr()
    assert "warning" in out.err and "bad.mid" in out.err
    assert "pieces 1" in out.out
    assert [f.name for f in (tmp_path / "o").glob("*.pr1")] == ["p0.pr1"]


def test_train_is_deterministic_and_writes_log(workspace, tmp_path):
    out = tmp_path / "again.ckpt1"
    assert main(["train", "--corpus", str(workspace / "pr"), "--config", str(workspace / "cfg.txt"),
                 "--out", str(out), "--seed", "3"]) == 0
    assert out.read_bytes() == (workspace / "m.ckpt1").read_bytes()
    assert (tmp_path / "again.loss.csv").read_text() == (workspace / "m.loss.csv").read_text()


def test_train_stages_separately(workspace, tmp_path):
    s1 = tmp_path / "s1.ckpt1"
    assert main(["train", "--stage", "1", "--corpus", str(workspace / "pr"), "--config",
                 str(workspace / "cfg.txt"), "--out", str(s1)]) == 0
    assert main(["train", "--stage", "2", "--corpus", str(workspace / "pr"), "--ckpt", str(s1),
                 "--out", str(tmp_path / "s2.ckpt1")]) == 0


def test_train_stage2_needs_checkpoint(workspace, tmp_path, capsys):
    assert main(["train", "--stage", "2", "--corpus", str(workspace / "pr"), "--out", str(tmp_path / "x")]) == 1
    assert "--ckpt" in capsys.readouterr().err


def test_train_bad_override(workspace, tmp_path, capsys):
    assert main(["train", "--corpus", str(workspace / "pr"), "--out", str(tmp_path / "x"),
                 "--set", "no_such_key=1"]) == 1
    assert "error" in capsys.readouterr().err


def test_generate_count_and_determinism(workspace, tmp_path):
    for d in ("a", "b"):
        assert main(["generate", "--ckpt", str(workspace / "m.ckpt1"), "--n", "4", "--seed", "7",
                     "--out", str(tmp_path / d)]) == 0
    a = sorted((tmp_path / "a").glob("*.pr1"))
    assert [f.name for f in a] == [f"gen_{i:04d}.pr1" for i in range(4)]
    for f in a:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
        assert pianoroll.load(f).shape == (2, 1, 4, 12)


def test_generate_missing_checkpoint(tmp_path, capsys):
    assert main(["generate", "--ckpt", str(tmp_path / "nope.ckpt1"), "--out", str(tmp_path / "g")]) == 1
    assert "error" in capsys.readouterr().err


def test_restore_keeps_shape(workspace, tmp_path):
    out = tmp_path / "r.pr1"
    assert main(["restore", "--ckpt", str(workspace / "m.ckpt1"), "--in", str(workspace / "pr" / "p0.pr1"),
                 "--out", str(out)]) == 0
    r = pianoroll.load(out)
    assert r.shape == (2, 1, 4, 12) and r.track_names == ("bass", "drums")


def test_eval_crafted_csv(tmp_path, capsys):
    cells = -np.ones((2, 1, 16, 24), dtype=np.int8)
    for pitch, onset in ((0, 0), (4, 4), (7, 8)):  # C E G, length 4
        cells[0, 0, onset:onset + 4, pitch] = 1
    cells[1, 0, ::2, 3] = 1
    d = tmp_path / "corpus"
    d.mkdir()
    pianoroll.save(Pianoroll(cells, ("piano", "drums")), d / "a.pr1")
    assert main(["eval", "--in", str(d), "--out", str(tmp_path / "m.csv")]) == 0
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows == ["track,metric,value", "piano,SR,100.0000", "piano,UPC,3.0000", "piano,UPC_total,3.0000",
                    "piano,QN,100.0000", "drums,DP,100.0000"]
    assert "per-bar UPC" in capsys.readouterr().out


def test_eval_empty_corpus(tmp_path, capsys):
    assert main(["eval", "--in", str(tmp_path), "--out", str(tmp_path / "m.csv")]) == 1
    assert "no input pieces" in capsys.readouterr().err


def test_render(workspace, tmp_path, capsys):
    out = tmp_path / "t.pgm"
    assert main(["render", "--in", str(workspace / "pr" / "p0.pr1"), "--track", "0", "--out", str(out)]) == 0
    header = out.read_bytes().split(b"\n", 3)
    assert header[0] == b"P5" and header[1].split() == [b"4", b"12"]
    assert main(["render", "--in", str(workspace / "pr" / "p0.pr1"), "--track", "5",
                 "--out", str(tmp_path / "x.pgm")]) == 1


def test_render_empty_track_is_all_black(tmp_path):
    pianoroll.save(Pianoroll.empty(1, 1, 4, 4), tmp_path / "e.pr1")
    assert main(["render", "--in", str(tmp_path / "e.pr1"), "--track", "0", "--out", str(tmp_path / "e.pgm")]) == 0
    img = pianoroll.parse_pgm((tmp_path / "e.pgm").read_bytes())
    assert img.shape == (4, 4) and not img.any()


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--bogus"])
    assert exc.value.code == 2
