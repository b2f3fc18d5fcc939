"""End-to-end CLI: run layout, determinism, exit codes, CSV contracts."""

import csv

import numpy as np
import pytest

import mprl.cli as cli
from mprl.learner import NumericalError
from mprl.metrics import jerk_metrics, stratified_bootstrap_ci
from mprl.mp import Trajectory

FAST = ["--set", "run.iterations=2", "--set", "run.episodes_per_iteration=4",
        "--set", "value.value_epochs=5", "--set", "learner.update_epochs=3"]


def train(tmp_path, name, *extra):
    out = tmp_path / name
    rc = cli.main(["train", "--out", str(out), *FAST, *extra])
    assert rc == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_train_writes_run_layout(tmp_path):
    out = train(tmp_path, "run", "--seeds", "0,1")
    assert (out / "config.ini").exists()
    manifest = (out / "manifest.txt").read_text()
    assert "version = " in manifest and "algorithm = tce" in manifest
    for seed in (0, 1):
        seed_dir = out / f"seed{seed}"
        assert (seed_dir / "progress.csv").exists()
        assert (seed_dir / "policy.npz").exists()
        assert (seed_dir / "value.npz").exists()
    rows = read_csv(out / "seed0" / "progress.csv")
    assert rows[0] == list(cli.PROGRESS_FIELDS)
    assert len(rows) == 3


def test_same_config_and_seed_is_byte_identical(tmp_path):
    a = train(tmp_path, "a", "--seeds", "7")
    b = train(tmp_path, "b", "--seeds", "7")
    pa = (a / "seed7" / "progress.csv").read_bytes()
    pb = (b / "seed7" / "progress.csv").read_bytes()
    assert pa == pb


def test_zero_iterations_gives_header_only_csv(tmp_path):
    out = train(tmp_path, "empty", "--seeds", "0",
                "--set", "run.iterations=0")
    rows = read_csv(out / "seed0" / "progress.csv")
    assert rows == [list(cli.PROGRESS_FIELDS)]


def test_existing_run_refused_without_force(tmp_path):
    out = train(tmp_path, "run", "--seeds", "0")
    rc = cli.main(["train", "--out", str(out), *FAST, "--seeds", "0"])
    assert rc == 2
    rc = cli.main(["train", "--out", str(out), *FAST, "--seeds", "0",
                   "--force"])
    assert rc == 0


def test_progress_csv_round_trips_through_the_formatter(tmp_path):
    out = train(tmp_path, "run", "--seeds", "0")
    path = out / "seed0" / "progress.csv"
    original = path.read_text()
    with open(path, newline="") as fh:
        parsed = list(csv.DictReader(fh))
    rows = [[int(r["iteration"]), int(r["env_steps"])]
            + [float(r[k]) for k in cli.PROGRESS_FIELDS[2:]] for r in parsed]
    cli._write_rows(path, cli.PROGRESS_FIELDS, rows)
    assert path.read_text() == original


def test_bad_config_exits_2(tmp_path):
    rc = cli.main(["train", "--out", str(tmp_path / "x"),
                   "--set", "learner.gamma=3"])
    assert rc == 2
    rc = cli.main(["train", "--out", str(tmp_path / "x"),
                   "--config", str(tmp_path / "missing.ini")])
    assert rc == 2


def test_numerical_abort_exits_3_and_keeps_partial_csv(tmp_path, monkeypatch):
    def exploding(cfg, seed, on_iteration=None):
        on_iteration({k: 0 for k in cli.PROGRESS_FIELDS})
        raise NumericalError("objective diverged", {"epoch": 1})

    monkeypatch.setattr(cli, "run_training", exploding)
    out = tmp_path / "boom"
    rc = cli.main(["train", "--out", str(out), "--seeds", "0"])
    assert rc == 3
    rows = read_csv(out / "seed0" / "progress.csv")
    assert len(rows) == 2  # header plus the row written before the abort
    assert not (out / "seed0" / "policy.npz").exists()


def test_eval_emits_one_row_per_metric(tmp_path):
    out = train(tmp_path, "run", "--seeds", "0")
    rc = cli.main(["eval", str(out / "seed0"), "--episodes", "1"])
    assert rc == 0
    rows = read_csv(out / "seed0" / "eval.csv")
    assert rows[0] == ["metric", "value"]
    assert [r[0] for r in rows[1:]] == list(cli._EVAL_METRICS)


def test_eval_jerk_matches_direct_metrics_call(tmp_path):
    out = train(tmp_path, "run", "--seeds", "0")
    assert cli.main(["eval", str(out / "seed0"), "--episodes", "1"]) == 0
    dump = np.load(out / "seed0" / "eval" / "episode0.npz")
    traj = Trajectory(pos=dump["desired_pos"], vel=dump["desired_vel"],
                      dt=float(dump["dt"]))
    report = jerk_metrics(traj)
    values = dict((r[0], float(r[1]))
                  for r in read_csv(out / "seed0" / "eval.csv")[1:])
    assert values["dimensionless_jerk"] == pytest.approx(
        report.dimensionless_jerk, rel=1e-12)
    assert values["max_jerk"] == pytest.approx(report.max_jerk, rel=1e-12)


def test_eval_on_run_dir_with_single_seed_resolves(tmp_path):
    out = train(tmp_path, "run", "--seeds", "3")
    assert cli.main(["eval", str(out), "--episodes", "1"]) == 0
    assert (out / "seed3" / "eval.csv").exists()


def test_eval_without_snapshot_exits_2(tmp_path):
    (tmp_path / "hollow").mkdir()
    assert cli.main(["eval", str(tmp_path / "hollow")]) == 2


def test_eval_on_multi_seed_run_requires_choice(tmp_path):
    out = train(tmp_path, "run", "--seeds", "0,1")
    assert cli.main(["eval", str(out)]) == 2


def test_report_single_run_degenerate_ci(tmp_path):
    out = train(tmp_path, "run", "--seeds", "0")
    report = tmp_path / "report.csv"
    rc = cli.main(["report", str(out), "--bootstrap", "100",
                   "--out", str(report)])
    assert rc == 0
    rows = read_csv(report)
    assert rows[0] == ["algorithm", "metric", "point", "ci_low", "ci_high",
                       "n_runs"]
    for row in rows[1:]:
        assert row[0] == "tce"
        assert float(row[2]) == float(row[3]) == float(row[4])
        assert int(row[5]) == 1


def test_report_matches_manual_bootstrap(tmp_path):
    out = train(tmp_path, "run", "--seeds", "0,1")
    report = tmp_path / "report.csv"
    assert cli.main(["report", str(out), "--bootstrap", "150",
                     "--seed", "9", "--out", str(report)]) == 0
    scores = [cli._final_window_scores(out / f"seed{s}" / "progress.csv")
              for s in (0, 1)]
    expected = stratified_bootstrap_ci(
        {"reacher-dense": [s["mean_return"] for s in scores]},
        n_boot=150, seed=9)
    got = {r[1]: r for r in read_csv(report)[1:]}["mean_return"]
    assert float(got[2]) == pytest.approx(expected.point, rel=1e-12)
    assert float(got[3]) == pytest.approx(expected.ci_low, rel=1e-12)
    assert float(got[4]) == pytest.approx(expected.ci_high, rel=1e-12)


def test_report_without_progress_exits_2(tmp_path):
    (tmp_path / "hollow").mkdir()
    assert cli.main(["report", str(tmp_path / "hollow")]) == 2
