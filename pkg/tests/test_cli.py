import json
import logging

import numpy as np
import pytest

from maxent_source.cli import main
from maxent_source.simulators import Dataset
from maxent_source.training import read_sweep_csv

TINY_TRAIN = """
[train]
max_iter = 30
decay_steps = 10
sim_batch = 64
entropy_batch = 64
n_projections = 16
lambda_final = 0.5

[train.evaluation]
n_entropy = 512
n_projections = 64
baseline_repeats = 2

[train.evaluation.c2st]
hidden = [16]
folds = 2
epochs = 3
"""


def write_config(tmp_path, task="ik", n=400, extra="", train=TINY_TRAIN, name="c.toml"):
    text = f'format_version = 1\ntask = "{task}"\noutput_dir = "out"\n{extra}\n[dataset]\npath = "data.srcd"\nn = {n}\nseed = 3\n{train}'
    path = tmp_path / name
    path.write_text(text)
    return path


def run_json(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1]) if out and code == 0 else None


# generate --------------------------------------------------------------------------


def test_generate_ik_shape_and_manifest(tmp_path, capsys):
    code, manifest = run_json(capsys, ["generate", "--task", "ik", "--n", "10000", "--seed", "7",
                                       "--out", str(tmp_path / "d.srcd")])
    assert code == 0
    assert manifest["task"] == "ik" and manifest["n"] == 10000 and manifest["seed"] == 7
    assert "format_version" in manifest
    assert Dataset.load(tmp_path / "d.srcd").data.shape == (10000, 2)


def test_generate_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["generate", "--task", "two_moons", "--n", "500", "--seed", "1",
                     "--out", str(tmp_path / f"{name}.srcd"), "--csv", str(tmp_path / f"{name}.csv")]) == 0
    assert (tmp_path / "a.srcd").read_bytes() == (tmp_path / "b.srcd").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_generate_usage_errors(tmp_path, capsys):
    assert main(["generate", "--task", "ik", "--n", "0", "--out", str(tmp_path / "d.srcd")]) == 2
    assert "--n" in capsys.readouterr().err
    assert main(["generate", "--task", "nope", "--n", "5", "--out", str(tmp_path / "d.srcd")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--task", "ik"])
    assert exc.value.code == 2


def test_generate_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["generate", "--task", "ik", "--n", "5", "--out", str(blocker / "sub" / "d.srcd")]) == 3


def test_env_seed_default_and_flag_override(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SOURCERER_SEED", "11")
    _, m = run_json(capsys, ["generate", "--task", "ik", "--n", "5", "--out", str(tmp_path / "a.srcd")])
    assert m["seed"] == 11
    _, m = run_json(capsys, ["generate", "--task", "ik", "--n", "5", "--seed", "4", "--out", str(tmp_path / "b.srcd")])
    assert m["seed"] == 4


# config errors ---------------------------------------------------------------------


def test_malformed_config_is_line_anchored(tmp_path, capsys):
    cfg = write_config(tmp_path, train=TINY_TRAIN.replace("lambda_final = 0.5", "lambda_final = 0.5\nbogus = 1"))
    assert main(["train", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    line = cfg.read_text().splitlines().index("bogus = 1") + 1
    assert f"c.toml:{line}:" in err and "bogus" in err


def test_unknown_task_and_missing_surrogate(tmp_path, capsys):
    assert main(["train", "--config", str(write_config(tmp_path, task="nope"))]) == 2
    assert "c.toml:2:" in capsys.readouterr().err
    cfg = write_config(tmp_path, task="sir", extra='mode = "surrogate"\nsurrogate = "missing.srcw"')
    assert main(["train", "--config", str(cfg)]) == 2


def test_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "absent.toml")]) == 3


def test_config_format_version_rejected(tmp_path):
    cfg = write_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("format_version = 1", "format_version = 9"))
    assert main(["train", "--config", str(cfg)]) == 5


# train / evaluate --------------------------------------------------------------------


def test_train_outputs_and_lambda_override(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, rec = run_json(capsys, ["train", "--config", str(cfg), "--lambda", "0.35", "--seed", "2"])
    assert code == 0
    run_dir = tmp_path / "out" / "run_lambda_0.35_seed2"
    assert rec["run_dir"] == str(run_dir)
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert {"entropy", "swd", "c2st", "format_version"} <= set(metrics)
    snapshot = (run_dir / "config.toml").read_text()
    assert "lambda_final = 0.35" in snapshot and "seed = 2" in snapshot
    for name in ("weights.srcw", "trace.csv"):
        assert (run_dir / name).exists()


def test_snapshot_reproduces_run(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "r1")]) == 0
    assert main(["train", "--config", str(tmp_path / "r1" / "config.toml"), "--out", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "r1" / "trace.csv").read_bytes() == (tmp_path / "r2" / "trace.csv").read_bytes()


def test_no_entropy_logs_zero_invocations(tmp_path, caplog):
    cfg = write_config(tmp_path)
    with caplog.at_level(logging.INFO, logger="maxent_source"):
        assert main(["train", "--config", str(cfg), "--no-entropy", "--out", str(tmp_path / "r")]) == 0
    assert "entropy estimator invocations: 0" in caplog.text
    assert "lambda_final = \"none\"" in (tmp_path / "r" / "config.toml").read_text()


def test_bad_lambda_flag(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg), "--lambda", "1.5"]) == 2
    assert main(["train", "--config", str(cfg), "--lambda", "abc"]) == 2


def test_evaluate_fresh_seed_close_to_stored(tmp_path, capsys):
    train = TINY_TRAIN.replace("max_iter = 30", "max_iter = 400").replace("decay_steps = 10", "decay_steps = 200")
    train = train.split("[train.evaluation]")[0]
    cfg = write_config(tmp_path, n=10000, train=train)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    stored = json.loads((tmp_path / "r" / "metrics.json").read_text())
    code, fresh = run_json(capsys, ["evaluate", "--run", str(tmp_path / "r"), "--seed", "99"])
    assert code == 0 and (tmp_path / "r" / "evaluation_seed99.json").exists()
    assert abs(fresh["entropy"] - stored["entropy"]) <= 0.05
    assert abs(fresh["c2st"] - stored["c2st"]) <= 0.03


def test_evaluate_missing_run(tmp_path):
    assert main(["evaluate", "--run", str(tmp_path / "nothing")]) == 3


# sweep / report --------------------------------------------------------------------


def test_sweep_parallel_identical_and_columns(tmp_path):
    cfg = write_config(tmp_path)
    for par, out in ((1, "s1"), (4, "s4")):
        assert main(["sweep", "--config", str(cfg), "--grid", "1.0,0.5", "--parallel", str(par),
                     "--out", str(tmp_path / out)]) == 0
    rows1 = read_sweep_csv(tmp_path / "s1" / "sweep.csv")
    rows4 = read_sweep_csv(tmp_path / "s4" / "sweep.csv")
    assert len(rows1) == 3
    assert {"lambda", "entropy", "swd", "c2st", "runtime_s", "diverged"} <= set(rows1[0])
    strip = lambda rows: [{k: v for k, v in r.items() if k != "runtime_s"} for r in rows]
    assert strip(rows1) == strip(rows4)
    for r in ("run_lambda_1", "run_lambda_0.5", "run_lambda_none"):
        assert (tmp_path / "s1" / r / "trace.csv").read_bytes() == (tmp_path / "s4" / r / "trace.csv").read_bytes()


def test_sweep_bad_grid(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["sweep", "--config", str(cfg), "--grid", "2.0"]) == 2
    assert main(["sweep", "--config", str(cfg), "--grid", "x,y"]) == 2


def test_report_aggregates(tmp_path):
    cfg = write_config(tmp_path)
    for seed in ("1", "2"):
        assert main(["sweep", "--config", str(cfg), "--grid", "0.5", "--no-none", "--seed", seed]) == 0
    sweeps = [str(tmp_path / "out" / f"sweep_seed{s}") for s in (1, 2)]
    assert main(["report", "--sweeps", sweeps[0], "--out", str(tmp_path / "one"), "--no-figures"]) == 0
    lines = (tmp_path / "one" / "report.csv").read_text().splitlines()
    assert lines[0].startswith("# format_version")
    header = lines[1].split(",")
    row = dict(zip(header, lines[2].split(",")))
    assert all(float(row[c]) == 0.0 for c in header if c.endswith("_std"))

    assert main(["report", "--sweeps", *sweeps, "--out", str(tmp_path / "two")]) == 0
    lines = (tmp_path / "two" / "report.csv").read_text().splitlines()
    row = dict(zip(lines[1].split(","), lines[2].split(",")))
    a, b = (read_sweep_csv(tmp_path / "out" / f"sweep_seed{s}" / "sweep.csv")[0] for s in (1, 2))
    assert float(row["entropy_mean"]) == pytest.approx((a["entropy"] + b["entropy"]) / 2)
    assert float(row["entropy_std"]) == pytest.approx(abs(a["entropy"] - b["entropy"]) / 2)
    assert row["n_runs"] == "2"
    assert (tmp_path / "two" / "sweep.png").stat().st_size > 0


def test_report_percentiles_for_time_series(tmp_path):
    cfg = write_config(tmp_path, task="sir", n=200)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    assert main(["report", "--runs", str(tmp_path / "r"), "--out", str(tmp_path / "rep")]) == 0
    obs = (tmp_path / "rep" / "r_infected_observed.csv").read_text().splitlines()
    assert obs[0].startswith("# format_version")
    assert len(obs) == 2 + 50
    assert (tmp_path / "rep" / "r_infected.png").exists()


def test_report_rejects_unknown_sweep_version(tmp_path):
    p = tmp_path / "sweep.csv"
    p.write_text("# format_version: 42\nlambda,entropy\n")
    assert main(["report", "--sweeps", str(p), "--out", str(tmp_path / "o")]) == 5


def test_report_needs_inputs(tmp_path):
    assert main(["report", "--out", str(tmp_path / "o")]) == 2


def test_surrogate_train_cli(tmp_path, capsys):
    out = tmp_path / "s.srcw"
    code, rec = run_json(capsys, ["surrogate-train", "--task", "sir", "--n-pairs", "300", "--seed", "1",
                                  "--max-epochs", "2", "--out", str(out)])
    assert code == 0 and out.exists() and "val_rmse" in rec
    assert json.loads((tmp_path / "s.srcw.json").read_text())["format_version"] == 1
    code, _ = run_json(capsys, ["surrogate-train", "--task", "sir", "--n-pairs", "300", "--max-epochs", "1",
                                "--rmse-ceiling", "1e-9", "--out", str(tmp_path / "t.srcw")])
    assert code == 4


def test_surrogate_mode_train(tmp_path):
    assert main(["surrogate-train", "--task", "sir", "--n-pairs", "300", "--max-epochs", "2",
                 "--out", str(tmp_path / "s.srcw")]) == 0
    cfg = write_config(tmp_path, task="sir", n=200, extra='mode = "surrogate"\nsurrogate = "s.srcw"')
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    assert np.isfinite(json.loads((tmp_path / "r" / "metrics.json").read_text())["swd"])
