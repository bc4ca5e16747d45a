"""Checks that run real worker groups through mpiexec."""
import json
import textwrap

import numpy as np
import pytest

from helmdef.experiments import ExperimentConfig, run_experiment, run_spmd, scaling_harness

from conftest import mpi_run, requires_mpi

pytestmark = [pytest.mark.mpi, requires_mpi]


def test_halo_and_operator_under_mpi():
    script = textwrap.dedent("""
        import json
        import numpy as np
        from helmdef.grid import SubdomainView, build_grid, get_comm, partition
        from helmdef.operators import assemble_matrix, helmholtz_operator
        comm = get_comm()
        g = build_grid(17, 17)
        v = SubdomainView(g, partition(g, 2, 2), comm)
        rng = np.random.default_rng(7)
        u = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
        k = 5 + rng.random(g.shape)
        pad = v.pad(np.ascontiguousarray(v.local(u)), 1)
        # every ghost inside the global grid carries the neighbour's value
        halo_ok = True
        for i in range(pad.shape[0]):
            for j in range(pad.shape[1]):
                gi, gj = v.i0 - 1 + i, v.j0 - 1 + j
                if 0 <= gi < g.nx and 0 <= gj < g.ny:
                    halo_ok &= pad[i, j] == u[gi, gj]
        y = v.gather(helmholtz_operator(v, k, "sommerfeld").apply(np.ascontiguousarray(v.local(u))))
        err = 0.0
        if comm.rank == 0:
            ref = (assemble_matrix(g, k, "sommerfeld") @ u.ravel()).reshape(g.shape)
            err = float(np.linalg.norm(y - ref) / np.linalg.norm(ref))
        ok = comm.allgather(bool(halo_ok))
        if comm.rank == 0:
            print(json.dumps({"halo": all(ok), "err": err}))
    """)
    out = json.loads(mpi_run(4, script, timeout=600).strip().splitlines()[-1])
    assert out["halo"] and out["err"] <= 1e-12


def test_run_spmd_matches_serial():
    cfg = ExperimentConfig(k=20, nx=33, ny=33, deflation="APD", coarse_op="ReD_Glk2",
                           coarse_tol=1e-12, mg_coarsest_points=5)
    ref = run_experiment(cfg, write=False)
    rep = run_spmd(cfg.__class__(**{**cfg.as_dict(), "px": 2, "py": 2}), 4, timeout=900)
    r = rep["report"]
    assert rep["workers"] == 4
    assert r["iterations"] == ref.row["outer_iters"]
    assert np.allclose(r["history"], ref.history, rtol=1e-8, atol=0)


def test_weak_scaling_harness():
    cfg = ExperimentConfig(k=10, nx=33, ny=33, coarse_mode="direct")
    recs = scaling_harness(cfg, [1, 4], mode="weak", timeout=900)
    assert [(r.nx, r.ny) for r in recs] == [(33, 33), (65, 65)]
    assert recs[0].speedup == 1.0 and recs[0].efficiency == 1.0
    assert abs(recs[0].outer_iters - recs[1].outer_iters) <= 1 + recs[0].outer_iters // 2
