import json
import shutil
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from deeplinear.cli import main, render_svg
from deeplinear.experiments import load_trajectory, save_dataset
from deeplinear.model import Dataset

FIXTURES = Path(__file__).parent / "fixtures"


def _scenario(tmp_path, **extra):
    lines = {
        "name": "cli",
        "data.n": 10,
        "model.depth": 2,
        "stop.max_steps": 500,
        "stop.risk_floor": 0.0,
        "out": str(tmp_path / "runs"),
    }
    lines.update(extra)
    p = tmp_path / "cli.scenario"
    p.write_text("".join(f"{k} = {v}\n" for k, v in lines.items()))
    return p


def test_run_writes_trajectory_and_summary(tmp_path, capsys):
    assert main(["run", str(_scenario(tmp_path))]) == 0
    assert (tmp_path / "runs" / "cli.csv").is_file()
    assert (tmp_path / "runs" / "cli.summary").is_file()
    assert "trajectory = " in capsys.readouterr().out


def test_run_override_in_header(tmp_path):
    assert main(["run", str(_scenario(tmp_path)), "--stop.risk-floor=1e-4", "--seed", "7"]) == 0
    meta = load_trajectory(tmp_path / "runs" / "cli.csv").meta
    assert float(meta["stop.risk_floor"]) == 1e-4
    assert meta["init.seed"] == "7"


def test_run_set_override(tmp_path):
    assert main(["run", str(_scenario(tmp_path)), "--set", "stop.max_steps=50"]) == 0
    assert load_trajectory(tmp_path / "runs" / "cli.csv").meta["stop.max_steps"] == "50"


def test_run_missing_file(tmp_path, capsys):
    missing = tmp_path / "nope.scenario"
    assert main(["run", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_run_bad_config(tmp_path):
    assert main(["run", str(_scenario(tmp_path, mode="sgd"))]) == 2
    assert main(["run", str(_scenario(tmp_path)), "--set", "bogus=1"]) == 2


def test_unknown_flag_and_verb():
    with pytest.raises(SystemExit) as exc:
        main(["run", "x.scenario", "--frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


def test_svm_two_points(tmp_path, capsys):
    p = tmp_path / "two.csv"
    save_dataset(p, Dataset(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([1.0, -1.0])))
    assert main(["svm", str(p)]) == 0
    out = capsys.readouterr().out
    assert "gamma = 1\n" in out
    cert = json.loads((tmp_path / "two.cert.json").read_text())
    assert cert["gamma"] == pytest.approx(1.0)


def test_circles_certificate_checks(tmp_path, capsys):
    data = tmp_path / "circles.csv"
    assert main(["gen-data", "circles", str(data), "--n", "24", "--seed", "2"]) == 0
    assert main(["svm", str(data), "--output", str(tmp_path / "c.json")]) == 0
    assert main(["check", str(data), str(tmp_path / "c.json")]) == 0
    assert capsys.readouterr().out.rstrip().endswith("PASS")


def test_check_detects_tampering(tmp_path, capsys):
    data = tmp_path / "blobs.csv"
    assert main(["gen-data", "blobs", str(data)]) == 0
    cert = tmp_path / "b.json"
    assert main(["svm", str(data), "--output", str(cert)]) == 0
    obj = json.loads(cert.read_text())
    obj["gamma"] *= 1.1
    cert.write_text(json.dumps(obj))
    assert main(["check", str(data), str(cert)]) == 1
    assert capsys.readouterr().out.rstrip().endswith("FAIL")


def test_svm_overlapping_blobs(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x = 0.3 * rng.standard_normal((20, 2))
    y = np.where(np.arange(20) % 2 == 0, 1.0, -1.0)
    p = tmp_path / "overlap.csv"
    save_dataset(p, Dataset(x, y))
    assert main(["svm", str(p)]) == 1
    assert "non-separable" in capsys.readouterr().err


def test_plot_golden(tmp_path):
    traj = tmp_path / "trajectory.csv"
    shutil.copy(FIXTURES / "trajectory.csv", traj)
    assert main(["plot", str(traj)]) == 0
    assert (tmp_path / "trajectory.svg").read_bytes() == (FIXTURES / "trajectory.svg").read_bytes()


def test_plot_single_row(tmp_path):
    lines = (FIXTURES / "trajectory.csv").read_text().splitlines(keepends=True)
    body = [ln for ln in lines if not ln.startswith("#")]
    p = tmp_path / "one.csv"
    p.write_text("".join(body[:2]))
    assert main(["plot", str(p), str(tmp_path / "one.svg")]) == 0
    root = ET.fromstring((tmp_path / "one.svg").read_text())
    circles = [el for el in root.iter() if el.tag.endswith("circle")]
    assert len(circles) >= 2
    assert not [el for el in root.iter() if el.tag.endswith("polyline")]


def test_plot_is_deterministic():
    table = load_trajectory(FIXTURES / "trajectory.csv")
    assert render_svg(table) == render_svg(table)


def test_plot_malformed_and_empty(tmp_path, capsys):
    lines = (FIXTURES / "trajectory.csv").read_text().splitlines(keepends=True)
    body = [ln for ln in lines if not ln.startswith("#")]
    bad = tmp_path / "bad.csv"
    bad.write_text(body[0] + body[1] + body[2].replace(",", ",x", 1) + body[3])
    assert main(["plot", str(bad)]) == 1
    assert "row 2" in capsys.readouterr().err
    empty = tmp_path / "empty.csv"
    empty.write_text(body[0])
    assert main(["plot", str(empty)]) == 1
    assert main(["plot", str(tmp_path / "missing.csv")]) == 2


def test_gen_data_any_support(tmp_path):
    p = tmp_path / "wide.csv"
    assert main(["gen-data", "blobs", str(p), "--n", "30", "--d", "8", "--any-support"]) == 0
    assert len(p.read_text().splitlines()) == 31
