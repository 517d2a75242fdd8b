import json
import math

import numpy as np
import pytest

from linespec import harness
from linespec.cli import main
from linespec.psnet import load_model
from linespec.sigmodel import load_dataset, realized_snr


def write_config(tmp_path, **sections):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(sections))
    return str(p)


SMALL_ARCH = {"depth": 2, "hidden": 20, "g": 200}
SMALL_EVAL = {"g": 200, "train_count": 100, "val_count": 20, "test_count": 40}


def run(*args):
    return main([str(a) for a in args])


class TestGenerate:
    def test_minimal(self, tmp_path):
        cfg = write_config(tmp_path, generate={"count": 10})
        assert run("generate", "--config", cfg, "--out", tmp_path / "o", "--seed", 3) == 0
        ds = load_dataset(tmp_path / "o" / "data.lspec")
        assert len(ds) == 10 and ds.config.seed == 3

    def test_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, generate={"count": 25, "noise": {"kind": "gaussian", "snr": 10}})
        run("generate", "--config", cfg, "--out", tmp_path / "a")
        run("generate", "--config", cfg, "--out", tmp_path / "b", "--threads", 3)
        assert (tmp_path / "a/data.lspec").read_bytes() == (tmp_path / "b/data.lspec").read_bytes()

    def test_blind_range(self, tmp_path):
        cfg = write_config(tmp_path, generate={
            "count": 300, "noise": {"kind": "blind", "sqrt_snr_low": 1, "sqrt_snr_high": 100}})
        run("generate", "--config", cfg, "--out", tmp_path)
        ds = load_dataset(tmp_path / "data.lspec")
        roots = [math.sqrt(realized_snr(s, y)) for s, y in ds.records]
        assert 1 - 1e-9 <= min(roots) and max(roots) <= 100 + 1e-9

    def test_splits(self, tmp_path):
        cfg = write_config(tmp_path, generate={"splits": {"train": 6, "test": 4}})
        run("generate", "--config", cfg, "--out", tmp_path)
        tr, te = load_dataset(tmp_path / "train.lspec"), load_dataset(tmp_path / "test.lspec")
        assert (len(tr), len(te)) == (6, 4)
        assert tr.config.seed != te.config.seed


class TestExitCodes:
    def test_bad_config_field(self, tmp_path):
        cfg = write_config(tmp_path, generate={"count": 1, "colour": "red"})
        assert run("generate", "--config", cfg, "--out", tmp_path) == 1

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert run("generate", "--config", p, "--out", tmp_path) == 1

    def test_missing_config_file(self, tmp_path):
        assert run("generate", "--config", tmp_path / "nope.json", "--out", tmp_path) == 3

    def test_seed_out_of_range(self, tmp_path):
        cfg = write_config(tmp_path)
        assert run("generate", "--config", cfg, "--out", tmp_path, "--seed", 2**64) == 1

    def test_numeric_failure(self, tmp_path):
        cfg = write_config(tmp_path, generate={"count": 10, "delta_min": 0.099, "m_min": 10,
                                               "max_retries": 2})
        assert run("generate", "--config", cfg, "--out", tmp_path) == 2

    def test_corrupt_model(self, tmp_path):
        (tmp_path / "m.psnet").write_bytes(b"garbage")
        cfg = write_config(tmp_path, generate={"count": 3}, eval={"methods": ["psnet"]})
        assert run("eval", "--config", cfg, "--out", tmp_path, "--model", tmp_path / "m.psnet") == 3

    def test_unknown_method(self, tmp_path):
        cfg = write_config(tmp_path, eval={"methods": ["prony"]})
        assert run("eval", "--config", cfg, "--out", tmp_path) == 1


class TestTrainEval:
    def test_tiny_train_then_eval(self, tmp_path):
        cfg = write_config(tmp_path, generate={"noise": {"kind": "gaussian", "snr": 100}},
                           arch=SMALL_ARCH, train={"epochs": 2, "batch_size": 16},
                           eval=dict(SMALL_EVAL, methods=["periodogram", "music", "psnet"]))
        assert run("train", "--config", cfg, "--out", tmp_path / "t", "--quiet") == 0
        loss = harness.read_csv(tmp_path / "t" / "loss.csv")
        assert [r["epoch"] for r in loss] == ["1", "2"]
        assert load_model(tmp_path / "t" / "model.psnet").arch.g == 200
        assert run("eval", "--config", cfg, "--out", tmp_path / "e",
                   "--model", tmp_path / "t" / "model.psnet", "--dump-spectra", 2) == 0
        report = harness.read_csv(tmp_path / "e" / "report.csv")
        assert [r["method"] for r in report] == ["periodogram", "music", "psnet"]
        assert all(r["signals_evaluated"] == "40" for r in report)
        per = harness.read_csv(tmp_path / "e" / "per_signal.csv")
        for r in report:
            fn = [float(p["fn_rate"]) for p in per if p["method"] == r["method"]]
            md = [float(p["md"]) for p in per if p["method"] == r["method"]]
            assert abs(np.mean(fn) - float(r["fn_rate_mean"])) <= 1e-12
            assert abs(np.mean(md) - float(r["md_mean"])) <= 1e-12
        spectra = harness.read_csv(tmp_path / "e" / "pseudospectra.csv")
        assert len(spectra) == 3 * 2 * 200

    def test_eval_grid_mismatch(self, tmp_path):
        cfg = write_config(tmp_path, arch=SMALL_ARCH, train={"epochs": 1},
                           eval=dict(SMALL_EVAL, methods=["psnet"]))
        run("train", "--config", cfg, "--out", tmp_path, "--quiet")
        other = write_config(tmp_path, eval={"methods": ["psnet"], "test_count": 5})
        assert run("eval", "--config", other, "--out", tmp_path,
                   "--model", tmp_path / "model.psnet") == 1

    def test_resume(self, tmp_path):
        base = dict(arch=SMALL_ARCH, eval=SMALL_EVAL,
                    generate={"noise": {"kind": "gaussian", "snr": 10}})
        full = write_config(tmp_path, train={"epochs": 3, "batch_size": 16, "dtype": "float64"}, **base)
        run("train", "--config", full, "--out", tmp_path / "full", "--quiet")
        (tmp_path / "half").mkdir()
        short = tmp_path / "half" / "run.json"
        short.write_text(json.dumps(dict(train={"epochs": 2, "batch_size": 16, "dtype": "float64"}, **base)))
        run("train", "--config", short, "--out", tmp_path / "half", "--quiet")
        run("train", "--config", full, "--out", tmp_path / "resumed", "--quiet",
            "--resume", tmp_path / "half" / "checkpoint.psnet")
        a = harness.read_csv(tmp_path / "full" / "loss.csv")
        b = harness.read_csv(tmp_path / "resumed" / "loss.csv")
        assert a == b
        assert (tmp_path / "full/model.psnet").read_bytes() == (tmp_path / "resumed/model.psnet").read_bytes()

    def test_noiseless_baselines(self, tmp_path):
        cfg = write_config(tmp_path, generate={"m_max": 3, "delta_min": 0.08},
                           eval={"methods": ["periodogram", "music"], "test_count": 300})
        run("eval", "--config", cfg, "--out", tmp_path)
        rows = {r["method"]: r for r in harness.read_csv(tmp_path / "report.csv")}
        assert float(rows["periodogram"]["fn_rate_mean"]) < 0.02
        assert float(rows["music"]["fn_rate_mean"]) == 0

    def test_m_unknown_rejected(self, tmp_path):
        cfg = write_config(tmp_path, eval={"methods": ["periodogram"], "test_count": 2})
        assert run("eval", "--config", cfg, "--out", tmp_path, "--no-m-known") == 1


class TestCompare:
    def test_rows_and_determinism(self, tmp_path):
        cfg = write_config(tmp_path, arch=SMALL_ARCH, train={"epochs": 1, "batch_size": 16},
                           eval=dict(SMALL_EVAL, regimes=["1", "10000", "blind"],
                                     methods=["periodogram", "psnet"]))
        for d in ("a", "b"):
            assert run("compare", "--config", cfg, "--out", tmp_path / d, "--quiet",
                       "--seed", 11, "--threads", 2) == 0
        rows = harness.read_csv(tmp_path / "a" / "report.csv")
        assert [(r["method"], r["snr_regime"]) for r in rows] == [
            (m, r) for r in ("1", "10000", "blind") for m in ("periodogram", "psnet")]
        for name in ("report.csv", "per_signal.csv", "loss_blind.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_single_row(self, tmp_path):
        cfg = write_config(tmp_path, eval=dict(SMALL_EVAL, regimes=["100"], methods=["music"]))
        run("compare", "--config", cfg, "--out", tmp_path, "--quiet")
        assert len(harness.read_csv(tmp_path / "report.csv")) == 1

    def test_sparse_grid(self, tmp_path):
        cfg = write_config(tmp_path, arch=SMALL_ARCH, train={"epochs": 1, "batch_size": 16},
                           eval=dict(SMALL_EVAL, regimes=[], methods=[], test_count=60))
        assert run("compare", "--config", cfg, "--out", tmp_path, "--sparse", "--quiet") == 0
        grid = harness.read_csv(tmp_path / "sparse_grid.csv")
        assert len(grid) == 100
        assert {(int(r["cardinality"]), int(r["m"])) for r in grid} == {
            (c, m) for c in range(1, 11) for m in range(1, 11)}
        assert sum(int(r["signals_evaluated"]) for r in grid) == 600


def test_sweep_depth(tmp_path):
    cfg = write_config(tmp_path, arch=SMALL_ARCH, train={"epochs": 1, "batch_size": 16},
                       eval=dict(SMALL_EVAL, depths=[1, 3]))
    assert run("sweep-depth", "--config", cfg, "--out", tmp_path, "--quiet") == 0
    rows = harness.read_csv(tmp_path / "depth_sweep.csv")
    assert [r["depth"] for r in rows] == ["1", "3"]
    assert list(rows[0]) == harness.DEPTH_HEADER


def test_derive_seed_stable():
    assert harness.derive_seed(5, "a") == harness.derive_seed(5, "a")
    assert harness.derive_seed(5, "a") != harness.derive_seed(5, "b")
    assert 0 <= harness.derive_seed(2**64 - 1, "x") < 2**64


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    assert "learning_rate=3e-4" in out and 'window="hann"' in out
