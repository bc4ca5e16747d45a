import csv
import dataclasses
import json

import numpy as np
import pytest

from helmdef.experiments import (CSV_COLUMNS, ConfigError, ExperimentConfig, ScalingRecord,
                                 build_problem, compute_speedup, factor_workers, load_config,
                                 parse_config, run_experiment, write_config)
from helmdef.grid import InfeasiblePartition
from helmdef.media import write_velocity_file

GOLDEN_HEADER = ("problem,k_or_f,nx,ny,kh,bc,deflation,coarse_op,outer_solver,outer_tol,"
                 "coarse_tol,px,py,outer_iters,avg_coarse_iters,max_coarse_iters,wall_time_s,"
                 "final_relres_precond,final_relres_true")


def test_parse_config_types():
    vals = parse_config("problem = mp2b  # comment\nk = 40\nnx = 65\nny = 65\n"
                        "shift = 1, -0.5\nallow_large_kh = yes\n\n")
    assert vals == {"problem": "mp2b", "k": 40.0, "nx": 65, "ny": 65, "shift": (1.0, -0.5),
                    "allow_large_kh": True}


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as err:
        parse_config("k = 40\nwavenumber = 3\n")
    assert err.value.line == 2 and err.value.key == "wavenumber"
    assert "line 2" in str(err.value)
    with pytest.raises(ConfigError) as err:
        parse_config("nx = 6.5\n")
    assert err.value.key == "nx"


def test_overrides_win(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("problem = mp2b\nk = 20\nnx = 33\nny = 33\n")
    cfg = load_config(str(p), ["k=10", "deflation = TLKM"])
    assert cfg.k == 10.0 and cfg.deflation == "TLKM" and cfg.nx == 33


def test_defaults_and_validation():
    cfg = ExperimentConfig(k=20, nx=33, ny=33)
    assert cfg.coarse_tol == 1e-6 and cfg.bc == "sommerfeld"
    assert ExperimentConfig(k=20, nx=33, ny=33, outer_solver="gcr").coarse_tol == 1e-1
    assert ExperimentConfig(problem="mp2a", k=20, nx=33, ny=33).bc == "dirichlet"
    for bad in (dict(k=None), dict(coarse_tol=2.0), dict(px=0), dict(deflation="DEF9"),
                dict(coarse_op="nope"), dict(nx=33, ny=None)):
        kw = dict(k=20, nx=33, ny=33)
        kw.update(bad)
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig(k=20, nx=33, ny=33, shift=(1.0, -0.5), coarse_mode="direct")
    p = tmp_path / "c.cfg"
    write_config(cfg, p)
    assert load_config(str(p)) == cfg


def test_kh_guard():
    cfg = ExperimentConfig(k=40, nx=33, ny=33)  # kh = 1.25
    with pytest.raises(ConfigError) as err:
        build_problem(cfg)
    assert err.value.key == "kh"
    assert build_problem(dataclasses.replace(cfg, allow_large_kh=True)).kh == pytest.approx(1.25)


def test_grid_from_kh():
    prob = build_problem(ExperimentConfig(k=40, kh=0.625))
    assert prob.grid.shape == (65, 65) and prob.kh == pytest.approx(0.625)
    wedge = build_problem(ExperimentConfig(problem="wedge", f=10, kh=0.35))
    assert wedge.grid.shape == (73, 121)
    assert wedge.kh == pytest.approx(0.34907, abs=1e-5)


def test_zero_rhs_run(tmp_path):
    cfg = ExperimentConfig(k=20, nx=33, ny=33, rhs="zero", output_dir=str(tmp_path))
    res = run_experiment(cfg)
    assert res.row["outer_iters"] == 0 and res.row["final_relres_true"] == 0.0


def test_outputs_and_golden_header(tmp_path):
    cfg = ExperimentConfig(k=10, nx=33, ny=33, coarse_mode="direct", output_dir=str(tmp_path),
                           tag="t1")
    res = run_experiment(cfg)
    run_experiment(dataclasses.replace(cfg, tag="t2"))
    assert ",".join(CSV_COLUMNS) == GOLDEN_HEADER
    lines = (tmp_path / "results.csv").read_text().splitlines()
    assert lines[0] == GOLDEN_HEADER and len(lines) == 3
    row = next(csv.DictReader(lines))
    assert int(row["outer_iters"]) == res.row["outer_iters"] > 0
    assert float(row["final_relres_precond"]) <= 1e-6
    hist = np.loadtxt(tmp_path / "t1_history.txt")
    assert hist.size == res.row["outer_iters"] + 1 and hist[0] == 1.0
    rep = json.loads((tmp_path / "t1.json").read_text())
    assert rep["config"]["k"] == 10 and rep["kh"] == pytest.approx(0.3125)
    assert {"relres_true", "relres_precond"} <= set(rep["report"])


def test_velocity_file_run(tmp_path):
    c = np.full((33, 33), 2000.0)
    c[:, :16] = 3000.0
    path = tmp_path / "v.txt"
    write_velocity_file(path, c)
    cfg = ExperimentConfig(problem="velocity-file", f=5, velocity_file=str(path),
                           extents=(0, 0, 320, 320), coarse_mode="direct",
                           output_dir=str(tmp_path))
    prob = build_problem(cfg)
    assert prob.grid.shape == (33, 33)
    assert prob.k.max() == pytest.approx(2 * np.pi * 5 / 2000)
    assert run_experiment(cfg).row["final_relres_precond"] <= 1e-6


def test_factor_workers():
    assert factor_workers(1) == (1, 1)
    assert factor_workers(4) == (2, 2)
    assert factor_workers(6) == (3, 2)
    assert factor_workers(7) == (7, 1)
    with pytest.raises(InfeasiblePartition):
        factor_workers(0)


def test_speedup_reference_normalisation():
    recs = [ScalingRecord(1, 1, 1, 33, 33, 4.0, 7), ScalingRecord(4, 2, 2, 33, 33, 2.0, 7)]
    compute_speedup(recs)
    assert recs[0].speedup == 1.0 and recs[0].efficiency == 1.0
    assert recs[1].speedup == 2.0 and recs[1].efficiency == 0.5


def test_partition_mismatch_rejected():
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(k=10, nx=33, ny=33, px=2, py=2), write=False)


@pytest.mark.parametrize("cfg,target,tol", [
    (dict(problem="mp2b", k=40, nx=65, ny=65, deflation="ADEF1", coarse_op="StrGlk"), 13, 2),
    (dict(problem="mp2a", k=20, nx=33, ny=33, deflation="TLKM", coarse_op="ReD_O2"), 9, 2),
])
def test_reference_runs(cfg, target, tol):
    res = run_experiment(ExperimentConfig(**cfg), write=False)
    assert abs(res.row["outer_iters"] - target) <= tol
