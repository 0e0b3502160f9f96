import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from radiomap import cli, io
from radiomap.experiment import ConfigError, ExperimentConfig, run_experiment
from radiomap.sampling import SlabPlan
from radiomap.scenario import ScenarioConfig, assemble_ground_truth

MICRO = {
    "schema": 1,
    "scenario": {"I": 16, "J": 16, "K": 8, "R": 2, "slf_rank": 2},
    "sampling": {"mode": "slab", "M": 5, "N": 4},
    "solver": {"L": 2, "max_iters": 1000, "rel_tol": 1e-12, "restarts": 3, "lam": 0.0, "extrapolate": True},
    "refine": False,
    "trials": 1,
    "master_seed": 3,
}


def micro(tmp_path, **over):
    return ExperimentConfig.from_dict({**MICRO, "output_dir": str(tmp_path / "run"), **over})


# configuration

def test_config_requires_schema():
    data = dict(MICRO)
    data.pop("schema")
    with pytest.raises(ConfigError, match="schema"):
        ExperimentConfig.from_dict(data)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**MICRO, "schema": 2})


@pytest.mark.parametrize("section,key", [
    (None, "colour"), ("scenario", "height"), ("sampling", "P"), ("solver", "momentum"),
])
def test_config_rejects_unknown_keys(section, key):
    data = json.loads(json.dumps(MICRO))
    if section is None:
        data[key] = 1
    else:
        data[section][key] = 1
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_dict(data)


def test_config_validates_sampling(tmp_path):
    with pytest.raises(ConfigError):
        micro(tmp_path, sampling={"mode": "slab", "M": 3})
    with pytest.raises(ConfigError):
        micro(tmp_path, sampling={"mode": "random-fiber", "q": 2, "rho": 0.1})
    with pytest.raises(ConfigError, match="missing path"):
        micro(tmp_path, sampling={"mode": "groups", "plan": str(tmp_path / "none.json")})
    with pytest.raises(ConfigError):
        micro(tmp_path, solver={"L": 0})
    with pytest.raises(ConfigError):
        micro(tmp_path, trials=0)


def test_config_file_round_trip(tmp_path):
    cfg = micro(tmp_path)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path).to_dict() == cfg.to_dict()


# runs

def test_single_exact_trial(tmp_path):
    cfg = micro(tmp_path)
    summary = run_experiment(cfg)
    rec = summary["records"][0]
    assert rec.status == "ok" and rec.seed == 3
    assert rec.nae_c < 1e-6 and rec.nae_x < 1e-6
    for name in ("nae_c", "nae_s", "nae_x"):
        assert summary[name]["median"] == getattr(rec, name)
    out = tmp_path / "run"
    assert json.loads((out / "summary.json").read_text())["trials"] == 1
    assert json.loads((out / "config.json").read_text())["master_seed"] == 3


def _rows_without_time(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r.pop("wall_time")
    return rows


def test_trials_csv_reproducible_across_jobs(tmp_path):
    a = micro(tmp_path / "a", trials=3, snr_db=20.0)
    b = micro(tmp_path / "b", trials=3, snr_db=20.0)
    run_experiment(a)
    run_experiment(b, jobs=2)
    ra = _rows_without_time(tmp_path / "a" / "run" / "trials.csv")
    rb = _rows_without_time(tmp_path / "b" / "run" / "trials.csv")
    assert ra == rb
    assert [r["index"] for r in ra] == ["0", "1", "2"]


def test_aborted_trials_are_counted(tmp_path):
    # more emitters than the solver can represent in a 1x1 slab set is fine,
    # but a plan file with out-of-range indices aborts every trial
    plan = tmp_path / "p.json"
    io.save_plan(plan, SlabPlan([0, 99], [0], [0], [0]))
    cfg = micro(tmp_path, trials=2, sampling={"mode": "slab", "plan": str(plan)})
    summary = run_experiment(cfg, write=False)
    assert summary["aborted"] == 2
    assert summary["nae_c"]["median"] is None
    assert all(r.status.startswith("aborted") for r in summary["records"])


def test_random_fiber_mode_runs(tmp_path):
    cfg = micro(tmp_path, sampling={"mode": "random-fiber", "q": 6},
                solver={"L": 2, "max_iters": 50, "restarts": 1})
    summary = run_experiment(cfg, write=False)
    assert summary["aborted"] == 0
    assert np.isfinite(summary["nae_x"]["median"])


# command line

@pytest.fixture
def scene(tmp_path):
    assert cli.main(["simulate", "--I", "14", "--J", "12", "--K", "6", "--R", "2",
                     "--seed", "1", "--out", str(tmp_path / "truth")]) == 0
    return tmp_path / "truth"


def test_simulate_writes_truth(scene):
    x = io.read_tensor(scene / "X.tns")
    assert x.shape == (14, 12, 6)
    gt = assemble_ground_truth(ScenarioConfig(I=14, J=12, K=6, R=2, seed=1))
    np.testing.assert_allclose(x, gt.map, rtol=1e-15)
    assert io.read_matrix(scene / "C.csv").shape == (6, 2)
    assert (scene / "S_2.csv").exists()


def test_check_exit_codes(tmp_path, capsys):
    assert cli.main(["check", "--dims", "64", "301", "8", "--L", "2", "--R", "2", "--q", "51"]) == 0
    assert cli.main(["check", "--dims", "64", "301", "8", "--L", "2", "--R", "2", "--q", "50"]) == 1
    assert cli.main(["check", "--dims", "8", "8", "8", "--L", "2", "--R", "2",
                     "--plan", str(tmp_path / "none.json")]) == 2
    err = capsys.readouterr().err
    assert "radiomap check" in err


def test_solve_slab_and_eval(scene, tmp_path, capsys):
    plan = tmp_path / "plan.json"
    io.save_plan(plan, SlabPlan.equispaced((14, 12, 6), 4, 4))
    assert cli.main(["sample", "--tensor", str(scene / "X.tns"), "--plan", str(plan),
                     "--slabs", str(tmp_path / "slabs"), "--out", str(tmp_path / "obs.txt")]) == 0
    conf = tmp_path / "solver.json"
    conf.write_text(json.dumps({"L": 2, "R": 2, "max_iters": 20}))
    assert cli.main(["solve-slab", "--x1", str(tmp_path / "slabs" / "x1.tns"),
                     "--x2", str(tmp_path / "slabs" / "x2.tns"), "--plan", str(plan),
                     "--config", str(conf), "--seed", "4", "--out", str(tmp_path / "est")]) == 0
    meta = json.loads((tmp_path / "est" / "result.json").read_text())
    assert meta["L"] == 2 and meta["R"] == 2 and meta["iterations"] <= 20
    capsys.readouterr()
    assert cli.main(["eval", "--truth", str(scene), "--est", str(tmp_path / "est"),
                     "--obs", str(tmp_path / "obs.txt")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "nae_c,nae_s,nae_x"
    assert all(np.isfinite(float(v)) for v in lines[1].split(","))


def test_solver_config_errors(tmp_path, scene):
    plan = tmp_path / "plan.json"
    io.save_plan(plan, SlabPlan.equispaced((14, 12, 6), 4, 4))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"L": 2, "R": 2, "beta": 1}))
    common = ["solve-slab", "--tensor", str(scene / "X.tns"), "--plan", str(plan),
              "--out", str(tmp_path / "e")]
    assert cli.main(common + ["--config", str(bad)]) == 2
    assert cli.main(common + ["--L", "2"]) == 2
    assert cli.main(common + ["--L", "2", "--R", "2", "--max-iters", "3"]) == 0


def test_solve_mask(scene, tmp_path):
    assert cli.main(["sample", "--tensor", str(scene / "X.tns"), "--q", "4", "--seed", "2",
                     "--out", str(tmp_path / "obs.txt")]) == 0
    assert cli.main(["solve-mask", "--obs", str(tmp_path / "obs.txt"), "--L", "2", "--R", "2",
                     "--max-iters", "5", "--out", str(tmp_path / "est")]) == 0
    assert io.read_matrix(tmp_path / "est" / "C.csv").shape == (6, 2)


def test_render_pgm(tmp_path):
    io.write_matrix(tmp_path / "m.csv", np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]))
    assert cli.main(["render", "--matrix", str(tmp_path / "m.csv"), "--out", str(tmp_path / "m.pgm")]) == 0
    data = (tmp_path / "m.pgm").read_bytes()
    assert data.startswith(b"P5\n3 2\n255\n")
    assert list(data[-6:]) == [0, 51, 102, 153, 204, 255]


def test_mc_seed_override(tmp_path, monkeypatch, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**MICRO, "output_dir": str(tmp_path / "run")}))
    monkeypatch.setenv("RADIOMAP_SEED", "11")
    assert cli.main(["mc", "--config", str(path)]) == 0
    assert json.loads((tmp_path / "run" / "summary.json").read_text())["master_seed"] == 11
    assert "1 trials, 0 aborted" in capsys.readouterr().out
    monkeypatch.setenv("RADIOMAP_SEED", "eleven")
    assert cli.main(["mc", "--config", str(path)]) == 2


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "radiomap.cli", "check", "--dims", "10", "10", "10",
                          "--L", "2", "--R", "2"], capture_output=True, text=True)
    assert out.returncode in (0, 1)
    assert out.stdout.strip()
