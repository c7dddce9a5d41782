"""End-to-end exercises of the command-line interface.

Commands run in-process through cli.main() for speed; the determinism
check shells out so each run starts from a fresh interpreter.
"""

import subprocess
import sys

import pytest

from bdsr import cli, datasynth as ds, netpbm
from bdsr.numtensor import Rng, derive_seed


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny synth->train pipeline shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    archive = root / "c.bdpa"
    ckpt = root / "m.ck"
    log = root / "loss.tsv"
    assert run_cli("--seed", "5", "synth", "--out", str(archive),
                   "--pages", "1", "--patch-stride", "8") == 0
    assert run_cli("--seed", "5", "train", "--archive", str(archive),
                   "--arch", "cts", "--r", "2", "--act", "relu",
                   "--epochs", "2", "--batch", "16",
                   "--out", str(ckpt), "--log", str(log)) == 0
    rng = Rng(derive_seed(5, 33))
    text = [int(rng.randint(ds.GLYPH_COUNT)) for _ in range(9)]
    hr = ds.pad_to_multiple(ds.render_page(text, 16), 2)
    lr = ds.decimate(hr, 2)
    netpbm.write_pbm(lr.bits, root / "page.pbm")
    netpbm.write_pbm(hr.bits, root / "gt.pbm")
    return root


def test_synth_reports_classes(workdir, capsys):
    out = workdir / "again.bdpa"
    assert run_cli("--seed", "5", "synth", "--out", str(out),
                   "--pages", "1", "--patch-stride", "8") == 0
    text = capsys.readouterr().out
    for cls in ("decimated", "masked", "glyph", "rendered"):
        assert f"{cls}=" in text


def test_synth_class_filter(tmp_path, capsys):
    out = tmp_path / "d.bdpa"
    assert run_cli("synth", "--out", str(out), "--pages", "1",
                   "--patch-stride", "8", "--classes", "decimated") == 0
    pairs = ds.read_archive(out)
    assert pairs.class_counts()["decimated"] == len(pairs)


def test_synth_deterministic(tmp_path):
    outs = []
    for name in ("a.bdpa", "b.bdpa"):
        path = tmp_path / name
        assert run_cli("--seed", "9", "synth", "--out", str(path),
                       "--pages", "1", "--patch-stride", "8") == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_invalid_r_is_usage_error(tmp_path):
    assert run_cli("train", "--archive", "x.bdpa", "--r", "3",
                   "--out", str(tmp_path / "m.ck")) == cli.EXIT_VALIDATION


def test_missing_archive_is_io_error(tmp_path):
    assert run_cli("train", "--archive", str(tmp_path / "missing.bdpa"),
                   "--out", str(tmp_path / "m.ck")) == cli.EXIT_IO


def test_unknown_config_key_named(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("pages=1\nbogus_key=3\n")
    code = run_cli("--config", str(conf), "synth", "--out",
                   str(tmp_path / "x.bdpa"))
    assert code == cli.EXIT_VALIDATION
    assert "bogus_key" in capsys.readouterr().err


def test_config_file_fills_defaults(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("# comment line\npages=1\npatch_stride=8\nseed=5\n")
    out = tmp_path / "c.bdpa"
    assert run_cli("--config", str(conf), "synth", "--out", str(out)) == 0
    ref = tmp_path / "ref.bdpa"
    assert run_cli("--seed", "5", "synth", "--out", str(ref),
                   "--pages", "1", "--patch-stride", "8") == 0
    assert out.read_bytes() == ref.read_bytes()


def test_upscale_writes_outputs_and_metrics(workdir, capsys):
    assert run_cli("upscale", "--ckpt", str(workdir / "m.ck"),
                   "--input", str(workdir / "page.pbm"),
                   "--out-gray", str(workdir / "out.pgm"),
                   "--out-bin", str(workdir / "out.pbm"),
                   "--gt", str(workdir / "gt.pbm")) == 0
    text = capsys.readouterr().out
    assert "psnr=" in text and "fscore=" in text
    lr = netpbm.read_pbm(workdir / "page.pbm")
    want = (2 * lr.shape[0], 2 * lr.shape[1])
    assert netpbm.read_pgm(workdir / "out.pgm").shape == want
    assert netpbm.read_pbm(workdir / "out.pbm").shape == want


def test_gamma_one_matches_default(workdir):
    a = workdir / "g1.pbm"
    b = workdir / "gdef.pbm"
    assert run_cli("upscale", "--ckpt", str(workdir / "m.ck"),
                   "--input", str(workdir / "page.pbm"),
                   "--gamma", "1.0", "--out-bin", str(a)) == 0
    assert run_cli("upscale", "--ckpt", str(workdir / "m.ck"),
                   "--input", str(workdir / "page.pbm"),
                   "--out-bin", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_ink_monotone_under_gamma(workdir):
    counts = []
    for gamma in ("1.0", "0.8", "0.5"):
        out = workdir / f"g{gamma}.pbm"
        assert run_cli("upscale", "--ckpt", str(workdir / "m.ck"),
                       "--input", str(workdir / "page.pbm"),
                       "--gamma", gamma, "--out-bin", str(out)) == 0
        counts.append(int(netpbm.read_pbm(out).sum()))
    assert counts[0] <= counts[1] <= counts[2]


def test_gamma_sweep_output(workdir, capsys):
    assert run_cli("upscale", "--ckpt", str(workdir / "m.ck"),
                   "--input", str(workdir / "page.pbm"),
                   "--gt", str(workdir / "gt.pbm"), "--gamma-sweep") == 0
    lines = capsys.readouterr().out.splitlines()
    assert sum(l.startswith("gamma=") for l in lines) == 10
    assert any(l.startswith("best_gamma=") for l in lines)


def test_eval_images(workdir, capsys):
    assert run_cli("eval", "--pred", str(workdir / "out.pbm"),
                   "--gt", str(workdir / "gt.pbm")) == 0
    text = capsys.readouterr().out
    assert "psnr=" in text and "fscore=" in text


def test_eval_checkpoint_loss(workdir, capsys):
    assert run_cli("eval", "--ckpt", str(workdir / "m.ck"),
                   "--archive", str(workdir / "c.bdpa")) == 0
    assert "loss=" in capsys.readouterr().out


def test_eval_needs_inputs():
    assert run_cli("eval") == cli.EXIT_VALIDATION


def test_resume_reproduces_log(tmp_path):
    archive = tmp_path / "c.bdpa"
    assert run_cli("--seed", "3", "synth", "--out", str(archive),
                   "--pages", "1", "--patch-stride", "8",
                   "--classes", "decimated") == 0
    full_log = tmp_path / "full.tsv"
    assert run_cli("--seed", "3", "train", "--archive", str(archive),
                   "--epochs", "2", "--batch", "32",
                   "--out", str(tmp_path / "full.ck"),
                   "--log", str(full_log)) == 0
    part_log = tmp_path / "part.tsv"
    ck = tmp_path / "part.ck"
    assert run_cli("--seed", "3", "train", "--archive", str(archive),
                   "--epochs", "1", "--batch", "32", "--out", str(ck),
                   "--log", str(part_log)) == 0
    assert run_cli("--seed", "3", "train", "--archive", str(archive),
                   "--epochs", "2", "--batch", "32", "--resume", str(ck),
                   "--out", str(tmp_path / "part2.ck"),
                   "--log", str(part_log)) == 0
    assert full_log.read_bytes() == part_log.read_bytes()


def test_verify_passes(capsys):
    assert run_cli("verify") == 0
    text = capsys.readouterr().out
    assert "FAIL" not in text
    assert text.count("PASS") >= 6


def test_verify_fits_time_budget():
    import time
    t0 = time.perf_counter()
    assert run_cli("verify") == 0
    assert time.perf_counter() - t0 < 60


def test_threads_flag(tmp_path):
    out = tmp_path / "t.bdpa"
    assert run_cli("--threads", "2", "synth", "--out", str(out),
                   "--pages", "1", "--patch-stride", "8",
                   "--classes", "decimated") == 0
    assert run_cli("--threads", "0", "synth", "--out", str(out),
                   "--pages", "1") == cli.EXIT_VALIDATION


def test_verify_catches_broken_tconv(tmp_path):
    # the deliberate-corruption hook must make adjointness fail
    out = subprocess.run(
        [sys.executable, "-m", "bdsr.cli", "verify"],
        env={"PATH": "/usr/bin:/bin:/usr/local/bin",
             "BDSR_TEST_BREAK_TCONV_FLIP": "1"},
        capture_output=True, text=True)
    assert out.returncode == cli.EXIT_VALIDATION
    assert "tconv-adjointness: FAIL" in out.stdout
