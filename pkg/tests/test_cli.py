import filecmp
import json
import os

import numpy as np
import pytest

from fmcorr import cli, fmb, shapes
from fmcorr.fmap import PointMap
from fmcorr.fmnet import init_params
from fmcorr.mesh import save_off


def run(*argv):
    return cli.main([str(a) for a in argv])


def entries(root):
    return sorted(e for e in os.listdir(root) if os.path.isdir(os.path.join(root, e)))


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Workspace with two near-isometric meshes, a truth map, a config file and a private cache."""
    root = tmp_path_factory.mktemp("cli")
    a = shapes.blob(120, seed=0)
    save_off(a, root / "a.off")
    save_off(shapes.bend(a, 2.5), root / "b.off")
    save_off(shapes.blob(30, seed=5), root / "tiny.off")
    PointMap(np.arange(120)).save(root / "truth.txt")
    (root / "pairs.txt").write_text("# source target truth\na.off b.off truth.txt\n")
    (root / "cfg.ini").write_text("[spectral]\nk = 20  # eigenpairs\n[shot]\nradius_frac = 0.15\n[train]\niters = 4\n"
                                  "batch_matches = 50\n")
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv(cli.CACHE_ENV, str(root / "cache"))
        mp.chdir(root)
        assert run("precompute", "--config", "cfg.ini", "a.off", "b.off") == 0
        yield root


def test_precompute_is_idempotent(ws, capsys):
    assert run("precompute", "--config", "cfg.ini", "a.off") == 0
    out = capsys.readouterr().out
    assert out.count(": cached") == len(cli.CACHE_FILES) and "computed" not in out
    assert len(entries(ws / "cache")) == 2
    assert all((ws / "cache" / e / "manifest.txt").exists() for e in entries(ws / "cache"))


def test_stale_k_needs_force(ws, capsys):
    assert run("precompute", "--config", "cfg.ini", "--k", "12", "a.off") == cli.EXIT_IO
    assert "--force" in capsys.readouterr().err


def test_corrupted_cache_file_is_named(ws, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "c"))
    assert run("precompute", "--config", "cfg.ini", "a.off") == 0
    entry = tmp_path / "c" / entries(tmp_path / "c")[0]
    blob = bytearray((entry / "shot.fmb").read_bytes())
    blob[-1] ^= 0xFF
    (entry / "shot.fmb").write_bytes(bytes(blob))
    capsys.readouterr()
    assert run("match", "--config", "cfg.ini", "--raw", "a.off", "a.off", "--out", tmp_path / "m") == cli.EXIT_IO
    assert "shot.fmb" in capsys.readouterr().err
    assert run("precompute", "--config", "cfg.ini", "--force", "a.off") == 0
    assert run("match", "--config", "cfg.ini", "--raw", "a.off", "a.off", "--out", tmp_path / "m") == 0


def test_cache_env_location(ws, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "elsewhere"))
    assert run("precompute", "--config", "cfg.ini", "tiny.off") == 0
    assert len(entries(tmp_path / "elsewhere")) == 1


def test_train_zero_iterations_is_init(ws):
    assert run("train", "--config", "cfg.ini", "--iters", "0", "--seed", "3", "pairs.txt", "--out", "ck0") == 0
    params, k, manifest = cli.load_checkpoint(str(ws / "ck0"))
    assert k == 20 and manifest["iterations"] == "0"
    np.testing.assert_array_equal(params.flat(), init_params(352, 3, 7).flat())
    assert (ws / "ck0" / "loss.csv").read_text() == "iter,loss\n"


def test_train_is_deterministic(ws):
    for out in ("ck1", "ck2"):
        assert run("train", "--config", "cfg.ini", "pairs.txt", "--out", out) == 0
    cmp = filecmp.dircmp(ws / "ck1", ws / "ck2")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    rows = (ws / "ck1" / "loss.csv").read_text().splitlines()
    assert rows[0] == "iter,loss" and len(rows) == 5
    assert run("train", "--config", "cfg.ini", "--timing", "pairs.txt", "--out", "ckt") == 0
    assert (ws / "ckt" / "loss.csv").read_text().startswith("iter,loss,wall_ms\n")


def test_train_k_beyond_cache(ws):
    assert run("train", "--config", "cfg.ini", "--k", "25", "pairs.txt", "--out", "bad") == cli.EXIT_USAGE


def test_match_refined_and_raw(ws):
    assert run("train", "--config", "cfg.ini", "pairs.txt", "--out", "ckm") == 0
    for out in ("m1", "m2"):
        assert run("match", "--config", "cfg.ini", "--checkpoint", "ckm", "a.off", "b.off", "--out", out) == 0
    for name in ("map.txt", "fmap.fmb", "manifest.txt"):
        assert (ws / "m1" / name).read_bytes() == (ws / "m2" / name).read_bytes()
    assert len(PointMap.load(ws / "m1" / "map.txt")) == 120
    assert fmb.read_matrix(str(ws / "m1" / "fmap.fmb")).shape == (20, 20)
    assert run("match", "--config", "cfg.ini", "--raw", "a.off", "b.off", "--out", "mraw") == 0
    assert fmb.read_manifest(str(ws / "mraw" / "manifest.txt"))["mode"] == "raw"


def test_match_usage_errors(ws):
    base = ("match", "--config", "cfg.ini", "a.off", "b.off", "--out", "mx")
    assert run(*base) == cli.EXIT_USAGE
    assert run(*base, "--checkpoint", "nowhere") == cli.EXIT_USAGE
    assert run(*base, "--raw", "--checkpoint", "ck0") == cli.EXIT_USAGE
    assert run(*base, "--checkpoint", "ck0", "--k", "10") == cli.EXIT_USAGE


def test_raw_self_match_complete_basis(ws, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "c"))
    cfg = tmp_path / "t.ini"
    cfg.write_text("[spectral]\nk = 30\n[shot]\nradius_frac = 0.3\n")
    assert run("precompute", "--config", cfg, "tiny.off") == 0
    assert run("match", "--config", cfg, "--raw", "--ridge", "0", "tiny.off", "tiny.off",
               "--out", tmp_path / "m") == 0
    np.testing.assert_array_equal(PointMap.load(tmp_path / "m" / "map.txt").assignments, np.arange(30))


def test_eval_truth_against_itself(ws):
    assert run("eval", "--config", "cfg.ini", "truth.txt", "truth.txt", "b.off", "--out", "e0") == 0
    summary = json.loads((ws / "e0" / "summary.json").read_text())
    assert summary["mean"] == 0.0 and summary["fraction_at_zero"] == 1.0 and summary["count"] == 120
    curve = (ws / "e0" / "princeton.csv").read_text().splitlines()
    assert curve[0] == "threshold,fraction" and len(curve) == 257
    assert all(line.endswith(",1.0") for line in curve[1:])


def test_eval_summary_matches_error_list(ws):
    assert run("train", "--config", "cfg.ini", "pairs.txt", "--out", "cke") == 0
    assert run("match", "--config", "cfg.ini", "--checkpoint", "cke", "a.off", "b.off", "--out", "me") == 0
    assert run("eval", "--config", "cfg.ini", "me/map.txt", "truth.txt", "b.off", "--out", "e1") == 0
    rows = (ws / "e1" / "errors.csv").read_text().splitlines()
    assert rows[0] == "vertex,error" and len(rows) == 121
    errs = np.array([float(r.split(",")[1]) for r in rows[1:]])
    summary = json.loads((ws / "e1" / "summary.json").read_text())
    assert summary["mean"] == pytest.approx(errs.mean(), rel=1e-12)
    assert run("eval", "--config", "cfg.ini", "--sample", "10", "me/map.txt", "truth.txt", "b.off",
               "--out", "e2") == 0
    assert len((ws / "e2" / "errors.csv").read_text().splitlines()) == 11


def test_upscale_identity(ws):
    PointMap(np.arange(120)).save(ws / "id.txt")
    assert run("upscale", "--config", "cfg.ini", "a.off", "a.off", "a.off", "a.off", "id.txt",
               "--out", "u0") == 0
    np.testing.assert_array_equal(PointMap.load(ws / "u0" / "map.txt").assignments, np.arange(120))
    assert (ws / "u0" / "admm.csv").read_text().startswith("iter,objective,primal_res,dual_res\n")


def test_curves_outputs(ws):
    assert run("curves", "--config", "cfg.ini", "--raw", "--max-rank", "10", "--bins", "5",
               "a.off", "b.off", "truth.txt", "--out", "cv") == 0
    cmc = (ws / "cv" / "cmc.csv").read_text().splitlines()
    assert cmc[0] == "rank,fraction" and len(cmc) == 11
    hist = json.loads((ws / "cv" / "hist.json").read_text())
    assert len(hist["counts"]) == 5 and sum(hist["counts"]) == 120
    assert run("curves", "--config", "cfg.ini", "--raw", "--bins", "0", "a.off", "b.off", "truth.txt",
               "--out", "cv") == cli.EXIT_USAGE


def test_exit_codes(ws, tmp_path, monkeypatch):
    with pytest.raises(SystemExit) as exc:
        run("bogus")
    assert exc.value.code == cli.EXIT_USAGE
    assert run("eval", "--config", "cfg.ini", "missing.txt", "truth.txt", "b.off", "--out", "ex") == cli.EXIT_IO
    (ws / "broken.off").write_text("OFF\n3 1 0\n0 0 0\n")
    assert run("precompute", "--config", "cfg.ini", "broken.off") == cli.EXIT_IO
    (ws / "bad.ini").write_text("[spectral]\nwhatever = 1\n")
    assert run("precompute", "--config", "bad.ini", "a.off") == cli.EXIT_USAGE
    # vanishing SHOT support: every descriptor is zero and the training system is singular
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "z"))
    (ws / "zero.ini").write_text("[spectral]\nk = 20\n[shot]\nradius_frac = 0.001\n[train]\niters = 2\n")
    assert run("precompute", "--config", "zero.ini", "a.off", "b.off") == 0
    assert run("train", "--config", "zero.ini", "pairs.txt", "--out", "z") == cli.EXIT_NUMERICAL
