import csv

import numpy as np
import pytest

from openpu.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, main
from openpu.data import read_manifest
from openpu.evaluate import metrics_from_confusion
from openpu.trainer import TrainConfig, init_state, save_checkpoint

SMALL = ["--dim", "6", "--per-class-labeled", "8", "--n-wild", "120", "--n-test", "60"]
FAST = ["--epochs", "2", "--hidden", "8", "--batch-wild", "32", "--batch-labeled", "12"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["gen", "--out-dir", str(d), "--seed", "4", *SMALL]) == 0
    return d


def test_gen_writes_fixed_files(dataset, tmp_path):
    for name in ("labeled.csv", "wild.csv", "test.csv", "wild_audit.csv", "manifest.txt"):
        assert (dataset / name).exists()
    wild = rows(dataset / "wild.csv")
    assert len(wild) == 120 and {r["label"] for r in wild} == {"-1"}
    m = read_manifest(dataset / "manifest.txt")
    assert m["seed"] == "4" and m["n_wild"] == "120" and "meta.numpy_version" in m
    again = tmp_path / "again"
    assert main(["gen", "--out-dir", str(again), "--seed", "4", *SMALL]) == 0
    for name in ("labeled.csv", "wild.csv", "test.csv", "wild_audit.csv"):
        assert (again / name).read_bytes() == (dataset / name).read_bytes()


def test_gen_zero_prior_is_pure_unknown(tmp_path):
    assert main(["gen", "--out-dir", str(tmp_path), "--pi", "0.0", *SMALL]) == 0
    assert {r["label"] for r in rows(tmp_path / "wild_audit.csv")} == {"0"}


def test_gen_replays_from_manifest(dataset, tmp_path):
    assert main(["gen", "--config", str(dataset / "manifest.txt"), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "wild.csv").read_bytes() == (dataset / "wild.csv").read_bytes()


def test_train_seeds_and_replay(dataset, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--data-dir", str(dataset), "--out-dir", str(out), "--seeds", "2", *FAST]) == 0
    for s in ("seed_0", "seed_1"):
        for name in ("checkpoint.npz", "history.csv", "metrics.csv", "confusion.csv"):
            assert (out / s / name).exists()
    summary = rows(out / "summary.csv")
    assert [r["seed"] for r in summary] == ["0", "1", "mean", "stderr"]
    f1 = [float(r["f1_u"]) for r in summary[:2]]
    assert float(summary[2]["f1_u"]) == pytest.approx(np.mean(f1))
    # identical manifest, identical metrics to the last bit
    replay = tmp_path / "replay"
    assert main(["train", "--config", str(out / "manifest.txt"), "--out-dir", str(replay)]) == 0
    assert (replay / "seed_0" / "metrics.csv").read_bytes() == (out / "seed_0" / "metrics.csv").read_bytes()
    assert (replay / "seed_1" / "history.csv").read_bytes() == (out / "seed_1" / "history.csv").read_bytes()


def test_flags_mirror_config_and_override_file(dataset, tmp_path):
    conf = tmp_path / "conf.txt"
    conf.write_text("epochs=1\ntaylor-order=3\nweighting=none\nhidden=8\n")
    out = tmp_path / "run"
    code = main(["train", "--config", str(conf), "--data-dir", str(dataset), "--out-dir", str(out),
                 "--single-network", "--taylor-order", "2"])
    assert code == 0
    m = read_manifest(out / "manifest.txt")
    assert (m["epochs"], m["taylor_order"], m["weighting"], m["single_network"]) == ("1", "2", "none", "True")
    assert len(rows(out / "history.csv")) == 1


def test_config_errors(dataset, tmp_path):
    assert main(["train", "--data-dir", str(tmp_path / "missing"), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["train", "--data-dir", str(dataset), "--out-dir", str(tmp_path), "--taylor-order", "0"]) == EXIT_CONFIG
    bad = tmp_path / "bad.txt"
    bad.write_text("learning_speed=3\n")
    assert main(["train", "--config", str(bad), "--data-dir", str(dataset), "--out-dir", str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_io_and_numeric_errors(dataset, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["gen", "--out-dir", str(blocker / "sub"), *SMALL]) == EXIT_IO
    assert main(["eval", "--checkpoint", str(tmp_path / "none.npz"), "--data", str(dataset / "test.csv"),
                 "--out-dir", str(tmp_path)]) == EXIT_IO
    code = main(["train", "--data-dir", str(dataset), "--out-dir", str(tmp_path / "r"), "--base-lr", "1e30", *FAST])
    assert code == EXIT_NUMERIC


def oracle_checkpoint(path):
    """Hand-set weights that separate three well-spaced blobs perfectly."""
    cfg = TrainConfig(hidden=(2,), single_network=True, weighting="none", beta=0.0)
    state = init_state(cfg, 2, 2, 1)
    p = state.net_c.params
    p["W0"][:] = np.eye(2)
    p["b0"][:] = 0.0
    p["Wq"][:] = 10 * np.eye(2)
    p["bq"][:] = 0.0
    p["Wf"][:] = 4 * np.eye(2)
    p["bf"][:] = -2.0
    save_checkpoint(path, cfg, state)


def test_eval_perfect_oracle(tmp_path):
    ck = tmp_path / "oracle.npz"
    oracle_checkpoint(ck)
    data = tmp_path / "test.csv"
    data.write_text("b0,b1,label\n5,0,1\n6,0,1\n0,5,2\n0,7,2\n-5,-5,0\n-4,-6,0\n")
    out = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(ck), "--data", str(data), "--out-dir", str(out)]) == 0
    m = rows(out / "metrics.csv")[0]
    for key in ("open_oa", "closed_oa", "f1_u", "auc_u"):
        assert float(m[key]) == 1.0
    empty = tmp_path / "empty.csv"
    empty.write_text("b0,b1,label\n")
    assert main(["eval", "--checkpoint", str(ck), "--data", str(empty), "--out-dir", str(out)]) == EXIT_CONFIG


def test_eval_report_matches_emitted_confusion(dataset, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data-dir", str(dataset), "--out-dir", str(run), *FAST]) == 0
    ev = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.npz"), "--data", str(dataset / "test.csv"),
                 "--out-dir", str(ev)]) == 0
    M = np.loadtxt(ev / "confusion.csv", delimiter=",", dtype=int)
    m = rows(ev / "metrics.csv")[0]
    # recompute from the emitted matrix by hand
    assert float(m["open_oa"]) == pytest.approx(np.trace(M) / M.sum())
    tp, fp, fn = M[0, 0], M[1:, 0].sum(), M[0, 1:].sum()
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    assert float(m["f1_u"]) == pytest.approx(f1)
    assert float(m["closed_oa"]) == pytest.approx(metrics_from_confusion(M).closed_oa)
    assert main(["eval", "--checkpoint", str(run / "checkpoint.npz"), "--data", str(dataset / "test.csv"),
                 "--out-dir", str(ev), "--deploy-net", "mean"]) == 0


def test_check_bounds_cases(tmp_path):
    assert main(["check-bounds", "--out-dir", str(tmp_path / "a"), "--pi", "0", "--trials", "20"]) == 0
    assert all(float(r["observed_gap"]) == 0.0 for r in rows(tmp_path / "a" / "bounds.csv"))
    assert main(["check-bounds", "--out-dir", str(tmp_path / "b"), "--pi", "0.5", "--orders", "1",
                 "--trials", "5"]) == 0
    assert {float(r["bound"]) for r in rows(tmp_path / "b" / "bounds.csv")} == {0.25}
    assert main(["check-bounds", "--out-dir", str(tmp_path / "c"), "--trials", "1000", "--seed", "3"]) == 0
    assert "violations 0" in (tmp_path / "c" / "bounds.txt").read_text()


def test_sweep_axes(tmp_path):
    out = tmp_path / "t"
    assert main(["sweep", "--axis", "t", "--seeds", "1", "--out-dir", str(out), *SMALL, *FAST]) == 0
    assert [r["value"] for r in rows(out / "sweep.csv")] == ["1", "2", "3", "4", "5", "6"]
    out = tmp_path / "aux"
    assert main(["sweep", "--axis", "aux_source", "--seeds", "1", "--out-dir", str(out), *SMALL, *FAST]) == 0
    assert [r["value"] for r in rows(out / "sweep.csv")] == ["wild", "pure_unknown", "wild_minus_unknown"]
    out = tmp_path / "upd"
    assert main(["sweep", "--axis", "updating", "--values", "discrete/discrete", "--seeds", "1",
                 "--out-dir", str(out), *SMALL, *FAST]) == 0
    assert main(["sweep", "--axis", "weighting", "--values", "sometimes", "--seeds", "1",
                 "--out-dir", str(out), *SMALL, *FAST]) == EXIT_CONFIG


def test_tau_axis_default_contains_095():
    from openpu.cli import AXIS_DEFAULTS

    assert "0.95" in AXIS_DEFAULTS["tau"].split(",")


def test_out_dir_env_default(monkeypatch, tmp_path):
    monkeypatch.setenv("OPENPU_OUT_DIR", str(tmp_path))
    assert main(["check-bounds", "--trials", "3"]) == 0
    assert (tmp_path / "bounds" / "bounds.csv").exists()
