import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helmdef.grid import SubdomainView, build_grid
from helmdef.transfer import (HIGH_ORDER_SIGMA, LINEAR_SIGMA, Transfer, prolong_bilinear,
                              prolong_high_order, restrict_fw, restrict_high_order)

from conftest import run_threads, views_for

WEIGHTS = {
    "linear": (np.array([1, 2, 1]) / 4, np.array([1, 2, 1]) / 2),
    "high": (np.array([1, 4, 6, 4, 1]) / 8, np.array([1, 4, 6, 4, 1]) / 8),
}


def transfer_matrices(nf, kind, dirichlet=False):
    """Dense 1D restriction/prolongation from the printed 1D weights."""
    rw, pw = WEIGHTS[kind]
    nc = (nf + 1) // 2
    R = np.zeros((nc, nf))
    P = np.zeros((nf, nc))
    for c in range(nc):
        for t, w in enumerate(rw):
            f = 2 * c + t - len(rw) // 2
            if 0 <= f < nf:
                R[c, f] = w
        for e, w in enumerate(pw):
            f = 2 * c + e - len(pw) // 2
            if 0 <= f < nf:
                P[f, c] = w
    if dirichlet:
        R[:, [0, -1]] = 0
        R[[0, -1], :] = 0
        P[:, [0, -1]] = 0
        P[[0, -1], :] = 0
    return R, P


def _rand(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_fw_constant_and_delta():
    u = np.ones((9, 9))
    r = restrict_fw(u).real
    assert np.allclose(r[1:-1, 1:-1], 1.0)
    d = np.zeros((9, 9))
    d[4, 4] = 1.0  # coincides with coarse (2, 2)
    r = restrict_fw(d).real
    assert r[2, 2] == pytest.approx(0.25)
    assert np.count_nonzero(r) == 1


def test_bilinear_partition_of_unity_and_ramp():
    uc = np.ones((5, 5))
    assert np.allclose(prolong_bilinear(uc), 1.0)
    xc = np.linspace(0, 1, 5)
    ramp = np.repeat(xc[:, None], 5, axis=1)
    xf = np.linspace(0, 1, 9)
    assert np.allclose(prolong_bilinear(ramp).real, np.repeat(xf[:, None], 9, axis=1))


def test_high_order_constants():
    r = restrict_high_order(np.ones((17, 17))).real
    assert np.allclose(r[2:-2, 2:-2], 4.0)
    assert not restrict_high_order(np.zeros((17, 17))).any()
    p = prolong_high_order(np.ones((9, 9))).real
    assert np.allclose(p[2:-2, 2:-2], 1.0)


def test_high_order_prolong_footprint():
    uc = np.zeros((9, 9))
    uc[4, 4] = 1.0
    p = prolong_high_order(uc).real
    w = WEIGHTS["high"][1]
    expected = np.zeros((17, 17))
    expected[6:11, 6:11] = np.outer(w, w)
    assert np.allclose(p, expected, atol=1e-15)
    assert p.sum() == pytest.approx(256 / 64)


@pytest.mark.parametrize("kind,n", [("linear", 9), ("high", 17)])
@pytest.mark.parametrize("bc", ["sommerfeld", "dirichlet"])
def test_transfers_match_assembled_oracle(kind, n, bc, rng):
    R1, P1 = transfer_matrices(n, kind, bc == "dirichlet")
    R, P = np.kron(R1, R1), np.kron(P1, P1)
    g = build_grid(n, n)
    fv = SubdomainView(g)
    T = Transfer(fv, fv.coarsen(), kind, bc)
    uf = _rand(rng, g.shape)
    uc = _rand(rng, fv.coarsen().grid.shape)
    assert np.allclose(T.restrict(uf).ravel(), R @ uf.ravel(), rtol=0, atol=1e-14 * 10)
    assert np.allclose(T.prolong(uc).ravel(), P @ uc.ravel(), rtol=0, atol=1e-14 * 10)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 12).map(lambda t: 2 * t + 1), kind=st.sampled_from(["linear", "high"]),
       bc=st.sampled_from(["dirichlet", "sommerfeld"]), seed=st.integers(0, 2 ** 31))
def test_restriction_is_scaled_adjoint(n, kind, bc, seed):
    rng = np.random.default_rng(seed)
    g = build_grid(n, n)
    fv = SubdomainView(g)
    cv = fv.coarsen()
    T = Transfer(fv, cv, kind, bc)
    x, y = _rand(rng, cv.shape), _rand(rng, fv.shape)
    sigma = LINEAR_SIGMA if kind == "linear" else HIGH_ORDER_SIGMA
    lhs = np.vdot(T.prolong(x), y)
    assert lhs == pytest.approx(sigma * np.vdot(x, T.restrict(y)), rel=1e-12)
    assert lhs == pytest.approx(np.vdot(x, T.restrict_adjoint(y)), rel=1e-12)


@pytest.mark.parametrize("kind", ["linear", "high"])
def test_distributed_transfers_match_serial(kind, rng):
    g = build_grid(33, 33)
    uf = _rand(rng, g.shape)
    uc = _rand(rng, (17, 17))
    fv = SubdomainView(g)
    T = Transfer(fv, fv.coarsen(), kind, "sommerfeld")
    ref_r, ref_p = T.restrict(uf), T.prolong(uc)

    def work(comm):
        v = views_for(g, 3, 2, comm)
        c = v.coarsen()
        t = Transfer(v, c, kind, "sommerfeld")
        return (c.gather(t.restrict(np.ascontiguousarray(v.local(uf)))),
                v.gather(t.prolong(np.ascontiguousarray(c.local(uc)))))

    for r, p in run_threads(6, work):
        assert np.allclose(r, ref_r, rtol=0, atol=1e-13)
        assert np.allclose(p, ref_p, rtol=0, atol=1e-13)


def test_unknown_kind():
    fv = SubdomainView(build_grid(9, 9))
    with pytest.raises(ValueError):
        Transfer(fv, fv.coarsen(), "cubic")
