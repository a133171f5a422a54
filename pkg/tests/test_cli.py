import json
import os

import numpy as np
import pytest

from gaitlab.cli import main


TINY = ["--iterations", "2", "--n-envs", "2", "--horizon", "48",
        "--seed", "5", "--quiet"]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run") / "walk")
    rc = main(["train", "--preset", "walk-desk", *TINY, "--out", out])
    assert rc == 0
    return out


def test_train_run_directory_contents(tiny_run):
    for name in ("config.yaml", "telemetry.csv", "initial.ckpt",
                 "final.ckpt", "summary.json"):
        assert os.path.exists(os.path.join(tiny_run, name)), name
    summary = json.load(open(os.path.join(tiny_run, "summary.json")))
    assert summary["iterations"] == 2


def test_train_rerun_is_byte_identical(tiny_run, tmp_path):
    out2 = str(tmp_path / "again")
    rc = main(["train", "--preset", "walk-desk", *TINY, "--out", out2])
    assert rc == 0
    a = open(os.path.join(tiny_run, "telemetry.csv"), "rb").read()
    b = open(os.path.join(out2, "telemetry.csv"), "rb").read()
    assert a == b
    ca = open(os.path.join(tiny_run, "final.ckpt"), "rb").read()
    cb = open(os.path.join(out2, "final.ckpt"), "rb").read()
    assert ca == cb


def test_train_no_energy_flag(tmp_path):
    out = str(tmp_path / "noenergy")
    rc = main(["train", "--preset", "walk-desk", *TINY, "--no-energy",
               "--out", out])
    assert rc == 0
    import yaml
    cfg = yaml.safe_load(open(os.path.join(out, "config.yaml")))
    assert cfg["alpha_energy"] == 0.0


def test_train_flat_no_fractal_flag(tmp_path):
    out = str(tmp_path / "flat")
    rc = main(["train", "--preset", "walk-desk", *TINY, "--flat-no-fractal",
               "--out", out])
    assert rc == 0
    import yaml
    cfg = yaml.safe_load(open(os.path.join(out, "config.yaml")))
    assert cfg["terrain"]["amplitude"] == 0.0


def test_train_invalid_config(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\nunknown_field: 3\n")
    rc = main(["train", "--preset", str(bad), "--quiet"])
    assert rc == 2
    worse = tmp_path / "worse.yaml"
    worse.write_text("name: [unclosed\n")
    rc = main(["train", "--preset", str(worse), "--quiet"])
    assert rc == 2


def test_unknown_preset():
    rc = main(["train", "--preset", "no-such-preset", "--quiet"])
    assert rc == 2


def test_sweep_artifacts(tmp_path):
    out = str(tmp_path / "sweep")
    rc = main(["sweep", "--gaits", "bounce", "--duration", "4",
               "--out", out])
    assert rc == 0
    lines = open(os.path.join(out, "sweep.csv")).read().splitlines()
    assert lines[0].startswith("gait,v_target,realized_speed")
    assert len(lines) == 12  # header + 11 bounce grid points
    assert os.path.exists(os.path.join(out, "energy_chart.svg"))
    report = json.load(open(os.path.join(out, "report.json")))
    assert "monotone" in report and report["n_rows"] == 11


def test_sweep_empty_gaits(tmp_path):
    rc = main(["sweep", "--gaits", "", "--out", str(tmp_path / "x")])
    assert rc == 2


def test_sweep_unknown_gait(tmp_path):
    rc = main(["sweep", "--gaits", "gallop", "--out", str(tmp_path / "x")])
    assert rc == 2


def test_eval_on_checkpoint(tiny_run, tmp_path):
    out = str(tmp_path / "eval")
    rc = main(["eval", "--checkpoint", tiny_run, "--trials", "2",
               "--seed", "1", "--out", out])
    assert rc == 0
    rows = open(os.path.join(out, "eval.csv")).read().splitlines()
    assert len(rows) == 3
    assert os.path.exists(os.path.join(out, "eval_contacts.svg"))


def test_eval_identical_seeds_identical_trials(tiny_run, tmp_path):
    out1 = str(tmp_path / "e1")
    out2 = str(tmp_path / "e2")
    for out in (out1, out2):
        rc = main(["eval", "--checkpoint", tiny_run, "--trials", "3",
                   "--seed", "4", "--out", out])
        assert rc == 0
    a = open(os.path.join(out1, "eval.csv"), "rb").read()
    b = open(os.path.join(out2, "eval.csv"), "rb").read()
    assert a == b


def test_eval_rejects_corrupt_checkpoint(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    rc = main(["eval", "--checkpoint", str(bad)])
    assert rc == 2


def test_analyze_scheduler_log(tmp_path, capsys):
    # build a trajectory-log-shaped CSV from the walk schedule
    import csv as csvmod
    from gaitlab.gait_schedule import WALK, schedule_tick
    path = tmp_path / "walk_log.csv"
    with open(path, "w", newline="") as f:
        cols = (["t"] + [f"q{i}" for i in range(12)]
                + [f"qd{i}" for i in range(12)] + [f"tau{i}" for i in range(12)]
                + ["base_x", "base_y", "base_z"]
                + ["base_qw", "base_qx", "base_qy", "base_qz"]
                + ["vel_x", "vel_y", "vel_z"]
                + ["angvel_x", "angvel_y", "angvel_z"]
                + ["contact_rf", "contact_lf", "contact_rr", "contact_lr"]
                + ["r_forward", "r_energy", "r_alive", "power_raw",
                   "power_pos", "energy_accum"])
        w = csvmod.writer(f)
        w.writerow(cols)
        for k in range(1200):
            t = k * 0.01
            stance = schedule_tick(WALK, 0.375, t)
            row = ([t] + [0.0] * 36 + [0.375 * t, 0.0, 0.3]
                   + [1.0, 0.0, 0.0, 0.0] + [0.375, 0.0, 0.0] + [0.0] * 3
                   + [int(c) for c in stance] + [0.0, -20.0, 7.5, 20.0, 25.0,
                                                 20.0 * t * 0.01])
            w.writerow(row)
    rc = main(["analyze", "--log", str(path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "label: walk" in out
    assert "energy per meter" in out


def test_analyze_missing_log():
    rc = main(["analyze", "--log", "/nonexistent/file.csv"])
    assert rc == 2
