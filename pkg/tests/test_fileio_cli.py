import json
import math

import numpy as np
import pytest

from qd3pm import cli, fileio
from qd3pm.datasets import bas_distribution
from qd3pm.experiments import preset_jobs
from qd3pm.streams import STREAMS, run_seed, stream


# -- file formats --------------------------------------------------------------

def test_parse_kv():
    kv = fileio.parse_kv("# comment\nL = 4\n\n  topology=star  # trailing\n")
    assert kv == {"L": "4", "topology": "star"}
    for bad in ("novalue\n", " = 3\n", "a = 1\na = 2\n"):
        with pytest.raises(fileio.FormatError):
            fileio.parse_kv(bad)


def test_checkpoint_roundtrip_exact(tmp_path):
    params = np.random.default_rng(0).normal(size=23) * 1e-3
    params[0] = 1 / 3
    ck = fileio.Checkpoint("qd3pm", 4, 1, "chain", 30, 0.008, "paper-eq17", "step-predictor", params)
    fileio.write_checkpoint(tmp_path / "c.txt", ck)
    back = fileio.read_checkpoint(tmp_path / "c.txt")
    np.testing.assert_array_equal(back.params, params)
    assert (back.N, back.L, back.topology, back.T, back.s, back.mode) == (4, 1, "chain", 30, 0.008,
                                                                          "paper-eq17")
    assert back.format_version == fileio.FORMAT_VERSION


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("format_version = 1\nN = 2\n")
    with pytest.raises(fileio.FormatError, match="missing"):
        fileio.read_checkpoint(p)
    ck = fileio.Checkpoint("qd3pm", 1, 0, "chain", 3, 0.008, "paper-eq17", "step-predictor",
                           np.zeros(1), format_version=9)
    fileio.write_checkpoint(p, ck)
    with pytest.raises(fileio.FormatError, match="version"):
        fileio.read_checkpoint(p)
    p.write_text(p.read_text().replace("format_version = 9", "format_version = 1")
                 .replace("N = 1", "N = one"))
    with pytest.raises(fileio.FormatError):
        fileio.read_checkpoint(p)


def test_csv_and_distribution(tmp_path):
    fileio.write_distribution(tmp_path / "d.csv", bas_distribution(1, 2))
    rows = fileio.read_csv(tmp_path / "d.csv")
    assert [r["bitstring"] for r in rows] == ["00", "01", "10", "11"]
    assert float(rows[1]["probability"]) == 0.25
    assert fileio.fmt(np.float64(0.1)) == "0.1" and fileio.fmt(np.int64(3)) == "3"


def test_default_out_dir(monkeypatch):
    monkeypatch.setenv(fileio.OUT_ENV, "/tmp/somewhere")
    assert str(fileio.default_out_dir()) == "/tmp/somewhere"
    monkeypatch.delenv(fileio.OUT_ENV)
    assert str(fileio.default_out_dir()) == fileio.DEFAULT_OUT


# -- seed streams ------------------------------------------------------------------

def test_streams_are_independent_and_reproducible():
    draws = {name: stream(7, name).random(4).tolist() for name in STREAMS}
    assert len({tuple(v) for v in draws.values()}) == len(STREAMS)
    assert stream(7, "init").random(4).tolist() == draws["init"]
    with pytest.raises(ValueError):
        stream(7, "other")
    assert len({run_seed(0, i) for i in range(50)}) == 50
    assert run_seed(3, 2) == run_seed(3, 2)


# -- CLI -------------------------------------------------------------------------------

def run_cli(tmp_path, *argv):
    return cli.run(list(argv) + ["--out", str(tmp_path)])


def test_theorem1_command(tmp_path):
    assert run_cli(tmp_path, "theorem1", "--n", "2..10") == 0
    rows = fileio.read_csv(tmp_path / "theorem1.csv")
    assert [int(r["n"]) for r in rows[:-1]] == list(range(2, 11))
    assert all(float(r["diff"]) < 1e-9 for r in rows)
    assert rows[-1]["model"] == "joint" and float(rows[-1]["measured"]) == 0.0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "theorem1" and man["format_version"] == fileio.FORMAT_VERSION


def test_schedule_and_dataset_dump(tmp_path):
    assert run_cli(tmp_path, "schedule-dump") == 0
    rows = fileio.read_csv(tmp_path / "schedule.csv")
    assert float(rows[0]["alpha_bar"]) == 1.0 and float(rows[-1]["alpha_bar"]) == 0.0
    assert run_cli(tmp_path, "dataset-dump", "--dataset", "dfc", "--n", "3",
                   "--bijections", "not,identity") == 0
    rows = fileio.read_csv(tmp_path / "dataset.csv")
    nz = {r["bitstring"] for r in rows if float(r["probability"]) > 0}
    assert nz == {"010", "101"}


def test_posterior_verify_command(tmp_path):
    assert run_cli(tmp_path, "posterior-verify", "--n", "3", "--cases", "100") == 0
    rows = fileio.read_csv(tmp_path / "posterior_verify.csv")
    assert all(float(r["max_deviation"]) < 1e-10 for r in rows)
    checks = {(r["check"], r["mode"]) for r in rows}
    assert ("choi-vs-formula", "bayes-consistent") in checks
    assert ("circuit-vs-formula", "paper-eq17") in checks


def test_gradcheck_command(tmp_path):
    assert run_cli(tmp_path, "gradcheck", "--n", "2", "--layers", "1", "--configs", "2") == 0
    rows = fileio.read_csv(tmp_path / "gradcheck.csv")
    assert all(float(r["max_ps_vs_fd"]) < 1e-5 for r in rows)
    assert all(float(r["max_adjoint_vs_ps"]) < 1e-10 for r in rows)


def _train(tmp_path, *extra):
    return run_cli(tmp_path, "train", "--dataset", "bas", "--n", "4", "--iterations", "15",
                   "--layers", "2", "--kl-every", "5", *extra)


def test_train_generate_eval_roundtrip(tmp_path):
    assert _train(tmp_path, "--seed", "3") == 0
    for name in ("checkpoint.txt", "loss.csv", "kl.csv", "generated.csv", "target.csv", "manifest.json"):
        assert (tmp_path / name).exists(), name
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 3 and man["config"]["train"]["L"] == 2
    assert man["config"]["train"]["batch_size"] == 16  # from the preset
    ck = fileio.read_checkpoint(tmp_path / "checkpoint.txt")
    assert (ck.N, ck.L, ck.model_kind) == (4, 2, "qd3pm")

    gen_dir = tmp_path / "gen"
    assert cli.run(["generate", "--checkpoint", str(tmp_path / "checkpoint.txt"), "--count", "50",
                    "--out", str(gen_dir)]) == 0
    lines = (gen_dir / "samples.txt").read_text().split()
    assert len(lines) == 50 and all(len(s) == 4 for s in lines)

    ev = tmp_path / "ev"
    assert cli.run(["eval", "--checkpoint", str(tmp_path / "checkpoint.txt"), "--samples", "200",
                    "--out", str(ev)]) == 0
    metrics = {r["metric"]: float(r["value"]) for r in fileio.read_csv(ev / "eval.csv")}
    kl_csv = fileio.read_csv(tmp_path / "kl.csv")
    assert metrics["kl_exact"] == float(kl_csv[-1]["kl"])
    assert 0 <= metrics["tv_exact"] <= 1


def test_factorized_train_and_onestep_generate(tmp_path):
    assert _train(tmp_path, "--model", "factorized") == 0
    ck = tmp_path / "checkpoint.txt"
    assert fileio.read_checkpoint(ck).model_kind == "factorized"
    assert cli.run(["generate", "--checkpoint", str(ck), "--count", "20", "--out", str(tmp_path / "g")]) == 0
    assert cli.run(["generate", "--checkpoint", str(ck), "--mode", "one-step",
                    "--out", str(tmp_path / "g")]) == 2


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("dataset = mixed-gaussian\nn = 4\niterations = 7\nlayers_unused_key_guard = 1\n")
    assert _train(tmp_path, "--config", str(cfg)) == 2
    cfg.write_text("dataset = mixed-gaussian\nn = 4\niterations = 7\nL = 5\nbatch_size = 3\n")
    assert run_cli(tmp_path, "train", "--config", str(cfg), "--layers", "2", "--kl-every", "7") == 0
    man = json.loads((tmp_path / "manifest.json").read_text())["config"]
    # flag beats file, file beats preset, preset fills the rest
    assert man["train"]["L"] == 2
    assert man["train"]["iterations"] == 7 and man["train"]["batch_size"] == 3
    assert man["train"]["lr_decay_steps"] == 5000
    assert man["run"]["dataset"] == "mixed-gaussian"


def test_usage_errors(tmp_path, capsys):
    assert run_cli(tmp_path, "train", "--bogus-flag") == 2
    assert run_cli(tmp_path, "nope") == 2
    assert _train(tmp_path, "--lr-initial", "-1") == 2
    assert run_cli(tmp_path, "generate", "--checkpoint", str(tmp_path / "missing.txt")) == 2
    assert run_cli(tmp_path, "theorem1", "--n", "2..11") == 2
    assert run_cli(tmp_path, "dataset-dump", "--dataset", "bas", "--n", "5") == 2
    assert run_cli(tmp_path, "train", "--threads", "0") == 2
    assert "error" in capsys.readouterr().err


def test_runtime_error_exit_1(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("non-finite loss")
    monkeypatch.setattr(cli, "train", boom)
    assert _train(tmp_path) == 1


def test_train_rerun_bitwise_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(["train", "--n", "4", "--iterations", "12", "--layers", "2", "--kl-every", "4",
                    "--seed", "5", "--out", str(a)]) == 0
    assert cli.run(["train", "--n", "4", "--iterations", "12", "--layers", "2", "--kl-every", "4",
                    "--seed", "5", "--threads", "3", "--out", str(b)]) == 0
    for name in ("loss.csv", "kl.csv", "generated.csv", "checkpoint.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_experiment_presets():
    jobs = preset_jobs("fig7", seeds=2, widths=[4])
    assert [j.model for j in jobs] == ["qd3pm"] * 2 + ["factorized"] * 2
    assert jobs[0].config.seed != jobs[1].config.seed
    fig9 = preset_jobs("fig9", seeds=1)
    assert len(fig9) == 4 * 5
    assert {j.config.bandwidths for j in fig9} == {None, (0.5,), (1.0,), (2.0,), (5.0,)}
    topo = preset_jobs("topology", seeds=1)
    assert {j.config.topology for j in topo} == {"star", "chain"}
    assert all(j.config.target_kind == "x0-predictor" for j in preset_jobs("fig8", seeds=1))
    assert {j.dataset for j in preset_jobs("fig6", seeds=1)} == {"mixed-gaussian"}
    with pytest.raises(ValueError):
        preset_jobs("fig99")


def test_experiment_command_thread_invariant(tmp_path):
    base = ["experiment", "--preset", "fig7", "--n", "4", "--seeds", "2", "--iterations", "6"]
    assert cli.run(base + ["--threads", "1", "--out", str(tmp_path / "t1")]) == 0
    assert cli.run(base + ["--threads", "2", "--out", str(tmp_path / "t2")]) == 0
    for name in ("runs.csv", "kl_curves.csv", "loss_curves.csv", "summary.csv"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t2" / name).read_bytes()
    rows = fileio.read_csv(tmp_path / "t1" / "summary.csv")
    assert {r["label"] for r in rows} == {"bas-n4", "bas-n4-factorized"}
    assert all(math.isfinite(float(r["median_kl"])) for r in rows)
