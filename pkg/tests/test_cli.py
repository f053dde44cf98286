import json
import os
import subprocess
import sys

import numpy as np
import pytest

from moveset import cli
from moveset.autodiff import ConfigurationError
from moveset.mmpde import read_points_csv
from moveset.problems import DEMO_DOMAIN


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


TINY_DEMO = {"mmpde": {"epochs": 5, "lr": 1e-3, "hidden_layers": 2, "hidden_width": 6}, "demo": {"grid": [8, 8]}}


def test_gaussian_demo_writes_points_with_fixed_boundary(tmp_path):
    out = tmp_path / "demo"
    code = cli.main(["mmpde-demo", "--problem", "gaussian-peak", "--c", "10", "--iterations", "1",
                     "--config", _write(tmp_path, TINY_DEMO), "--out", str(out)])
    assert code == 0
    before = read_points_csv(out / "points_iter0.csv", DEMO_DOMAIN).coords
    after = read_points_csv(out / "points_iter1.csv", DEMO_DOMAIN).coords
    b = DEMO_DOMAIN.on_boundary(before)
    np.testing.assert_array_equal(after[b], before[b])
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["demo"]["c"] == 10.0
    assert report["extra"]["boundary_max_displacement"] == 0.0


def test_ellipse_demo_four_iterations(tmp_path):
    out = tmp_path / "ell"
    assert cli.main(["mmpde-demo", "--problem", "ellipse", "--iterations", "4", "--config",
                     _write(tmp_path, TINY_DEMO), "--out", str(out)]) == 0
    for i in range(1, 5):
        assert (out / f"points_iter{i}.csv").exists()
    assert not (out / "points_iter5.csv").exists()


def test_phenomenon_table_shape(tmp_path):
    out = tmp_path / "ph"
    cfg = {"phenomenon": {"k": [2, 4, 8, 16], "m_r": [30], "epochs": 10, "smoothing": 5},
           "pinn": {"hidden_layers": 1, "hidden_width": 5}}
    assert cli.main(["phenomenon", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    lines = (out / "phenomenon.csv").read_text().splitlines()
    assert lines[0] == "k,m_r,min_loss,smoothed_final_loss,e"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["2", "4", "8", "16"]


TINY_RUN = {"mspinn": {"pretrain_epochs": 5, "mmpde_epochs": 5, "formal_epochs": 5, "interior_counts": [8, 8],
                       "boundary_count": 30, "test_counts": [21, 21]},
            "mmpde": {"hidden_layers": 2, "hidden_width": 6}}


def test_mspinn_run_three_iterations_manifest(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["run", "--mode", "mspinn", "--problem", "poisson2d-one-peak", "--iterations", "3",
                     "--config", _write(tmp_path, TINY_RUN), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert sorted(report["files"]["points"]) == ["points_iter1", "points_iter2", "points_iter3"]
    for name in report["manifest"]:
        assert (out / name).exists()


def test_repeated_run_and_replay_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, {"mspinn": {"pretrain_epochs": 8, "formal_epochs": 7, "interior_counts": [10, 5],
                                       "boundary_count": 30, "test_counts": [41, 41]}})
    dirs = [tmp_path / n for n in ("a", "b")]
    for d in dirs:
        assert cli.main(["run", "--mode", "pinn", "--problem", "burgers1d", "--scale", "desk", "--seed", "7",
                         "--config", cfg, "--out", str(d)]) == 0
    for name in ("report.json", "loss_pinn.csv"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    # the stored config replays the run
    snap = json.loads((dirs[0] / "report.json").read_text())["config"]
    replay = tmp_path / "c"
    assert cli.main(["run", "--config", _write(tmp_path, snap, "snap.json"), "--out", str(replay)]) == 0
    assert (replay / "report.json").read_bytes() == (dirs[0] / "report.json").read_bytes()


def test_numeric_abort_exit_code_and_stage(tmp_path, capsys):
    cfg = dict(TINY_RUN, pinn={"lr": 1e30})
    code = cli.main(["run", "--mode", "mspinn", "--problem", "poisson2d-one-peak", "--config",
                     _write(tmp_path, cfg), "--out", str(tmp_path / "x")])
    assert code == cli.EXIT_NUMERIC
    assert "error [pretrain]" in capsys.readouterr().err


@pytest.mark.parametrize("doc", [
    {"pinn": {"learning_rate": 1e-3}},
    {"bogus": 1},
    {"mspinn": {"pretrain_epochs": 0}},
    {"monitor": {"form": "cubic"}},
    {"scale": "huge"},
    {"command": "phenomenon"},
])
def test_bad_configs_exit_2(tmp_path, capsys, doc):
    code = cli.main(["run", "--problem", "burgers1d", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG
    assert "error [config]" in capsys.readouterr().err


def test_unknown_flag_and_problem(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["run", "--problem", "burgers1d", "--epochs", "3", "--out", str(tmp_path)])
    assert cli.main(["run", "--problem", "heat", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["mmpde-demo", "--problem", "heat", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_resolve_layers_presets_file_and_flags():
    cfg = cli.resolve("run", {"mspinn": {"formal_epochs": 11}}, {"problem": "burgers1d", "iterations": 2})
    assert cfg["scale"] == "desk"
    assert cfg["mspinn"]["formal_epochs"] == 11
    assert cfg["mspinn"]["pretrain_epochs"] == cli.MSPINN_PRESETS["desk"]["burgers1d"]["pretrain_epochs"]
    assert cfg["mspinn"]["mmpde_iterations"] == 2
    paper = cli.resolve("run", None, {"problem": "burgers1d", "scale": "paper"})
    assert (paper["mspinn"]["pretrain_epochs"], paper["mspinn"]["mmpde_epochs"],
            paper["mspinn"]["formal_epochs"]) == (20000, 20000, 40000)
    assert paper["mspinn"]["interior_counts"] == [200, 100]
    with pytest.raises(ConfigurationError):
        cli.resolve("run", {"mmpde": {"epochs": 3}}, {"problem": "burgers1d"})


def test_thread_cap_env_and_module_entry(tmp_path):
    env = dict(os.environ, MOVESET_THREADS="1")
    r = subprocess.run([sys.executable, "-m", "moveset", "--help"], env=env, capture_output=True, text=True)
    assert r.returncode == 0 and "mmpde-demo" in r.stdout
    env["MOVESET_THREADS"] = "many"
    r = subprocess.run([sys.executable, "-c", "import moveset"], env=env, capture_output=True, text=True)
    assert r.returncode != 0 and "MOVESET_THREADS" in r.stderr
