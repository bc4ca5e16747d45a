import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helmdef.grid import build_grid
from helmdef.operators import (GridTooLarge, OperatorError, apply_cslp, apply_helmholtz,
                               assemble_matrix, cslp_operator, helmholtz_operator,
                               lift_dirichlet)

from conftest import run_threads, views_for


def _rand(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def dirichlet_eigenvalues(n, k):
    """Closed-form spectrum of the 5-point Dirichlet operator, ``n - 1`` interior points per side."""
    h = 1.0 / n
    i = np.arange(1, n)
    c = 2 - 2 * np.cos(i * np.pi * h)
    return np.sort((c[:, None] + c[None, :] - k * k * h * h).ravel() / h ** 2)


def test_zero_in_zero_out():
    g = build_grid(9, 9)
    k = np.full(g.shape, 20.0)
    z = np.zeros(g.shape, complex)
    assert not apply_helmholtz(z, k, "sommerfeld").any()
    assert not apply_cslp(z, k, (1, -0.5), "dirichlet").any()


@pytest.mark.parametrize("bc", ["dirichlet", "sommerfeld"])
def test_helmholtz_matches_oracle_9x9(bc, rng):
    g = build_grid(9, 9)
    k = np.full(g.shape, 20.0)
    u = _rand(rng, g.shape)
    A = assemble_matrix(g, k, bc)
    v = apply_helmholtz(u, k, bc, g)
    assert np.linalg.norm(v.ravel() - A @ u.ravel()) <= 1e-13 * np.linalg.norm(A @ u.ravel())


@pytest.mark.parametrize("bc", ["dirichlet", "sommerfeld"])
def test_cslp_matches_oracle_17x17(bc, rng):
    g = build_grid(17, 17)
    k = np.full(g.shape, 40.0)
    u = _rand(rng, g.shape)
    M = assemble_matrix(g, k, bc, shift=(1, -0.5))
    v = apply_cslp(u, k, (1, -0.5), bc, g)
    assert np.linalg.norm(v.ravel() - M @ u.ravel()) <= 1e-13 * np.linalg.norm(M @ u.ravel())


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 12), m=st.integers(3, 12), bc=st.sampled_from(["dirichlet", "sommerfeld"]),
       seed=st.integers(0, 2 ** 31))
def test_variable_k_matches_oracle(n, m, bc, seed):
    rng = np.random.default_rng(seed)
    g = build_grid(n, m, (0, 0, 1, (m - 1) / (n - 1)))
    k = 5 + 30 * rng.random(g.shape)
    u = _rand(rng, g.shape)
    for shift in (None, (1.0, -0.5), (0.3, 0.7)):
        M = assemble_matrix(g, k, bc, shift=shift)
        op = helmholtz_operator(g, k, bc) if shift is None else cslp_operator(g, k, bc, shift)
        ref = M @ u.ravel()
        assert np.linalg.norm(op.apply(u).ravel() - ref) <= 1e-12 * max(np.linalg.norm(ref), 1)


def test_interior_center_coefficient():
    g = build_grid(33, 33)
    op = helmholtz_operator(g, np.full(g.shape, 20.0), "dirichlet")
    assert op.coeffs[(0, 0)][16, 16] == pytest.approx((4 - 0.625 ** 2) * 1024, rel=1e-14)
    assert op.coeffs[(0, 0)][16, 16] == pytest.approx(3696.0, rel=1e-14)


def test_unshifted_cslp_is_helmholtz(rng):
    g = build_grid(17, 17)
    k = np.full(g.shape, 30.0)
    u = _rand(rng, g.shape)
    for bc in ("dirichlet", "sommerfeld"):
        assert np.allclose(apply_cslp(u, k, (1, 0), bc, g), apply_helmholtz(u, k, bc, g),
                           rtol=0, atol=1e-12 * np.abs(apply_helmholtz(u, k, bc, g)).max())


def test_dirichlet_laplacian_rows():
    g = build_grid(5, 5)
    A = assemble_matrix(g, np.zeros(g.shape), "dirichlet").toarray()
    boundary = np.ones(g.shape, bool)
    boundary[1:-1, 1:-1] = False
    b = boundary.ravel()
    assert np.array_equal(A[b], np.eye(25)[b])
    # the full 5-point row sums to zero, so a kept row sums to what was eliminated
    h2 = g.h ** 2
    for i in range(1, 4):
        for j in range(1, 4):
            r = i * 5 + j
            eliminated = sum(1 for ii, jj in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1))
                             if boundary[ii, jj])
            assert A[r].sum() == pytest.approx(eliminated / h2, abs=1e-9)


def test_sommerfeld_symmetry_structure():
    g = build_grid(9, 9)
    A = assemble_matrix(g, np.full(g.shape, 20.0), "sommerfeld").toarray()
    # the printed edge rows double the inward neighbour, so A itself is not
    # symmetric, while D A is (D = 1/2 on edges, 1/4 at corners)
    assert not np.allclose(A, A.T)
    d = np.ones(g.shape)
    d[0, :] *= 0.5
    d[-1, :] *= 0.5
    d[:, 0] *= 0.5
    d[:, -1] *= 0.5
    DA = d.ravel()[:, None] * A
    assert np.allclose(DA, DA.T, rtol=0, atol=1e-12 * np.abs(A).max())
    assert not np.allclose(A, A.conj())


def test_nnz_per_interior_row():
    g = build_grid(9, 9)
    A = assemble_matrix(g, np.full(g.shape, 20.0), "sommerfeld").tocsr()
    nnz = np.diff(A.indptr).reshape(g.shape)
    assert np.all(nnz[1:-1, 1:-1] == 5)
    assert helmholtz_operator(g, np.full(g.shape, 20.0), "sommerfeld").nnz_per_row == 5


def test_dirichlet_spectrum_law():
    n = 17  # 16 x 16 interior points
    g = build_grid(n + 1, n + 1)
    k = 20.0
    A = assemble_matrix(g, np.full(g.shape, k), "dirichlet").toarray()
    inner = np.zeros(g.shape, bool)
    inner[1:-1, 1:-1] = True
    Ai = A[np.ix_(inner.ravel(), inner.ravel())]
    lam = np.sort(np.linalg.eigvalsh(Ai.real))
    ref = dirichlet_eigenvalues(n, k)
    assert np.max(np.abs(lam - ref) / np.abs(ref)) < 1e-9


def test_oracle_cap():
    with pytest.raises(GridTooLarge):
        assemble_matrix(build_grid(131, 131), 1.0, "dirichlet")


def test_unknown_boundary_condition():
    with pytest.raises(OperatorError):
        helmholtz_operator(build_grid(5, 5), np.ones((5, 5)), "neumann")


def test_lift_dirichlet_reproduces_harmonic_function():
    # u = x y is discretely harmonic; with k = 0 the lifted system reproduces it
    g = build_grid(9, 9)
    x, y = g.coordinates()
    X, Y = np.meshgrid(x, y, indexing="ij")
    u = X * Y
    b = lift_dirichlet(np.zeros(g.shape), u, g)
    A = assemble_matrix(g, np.zeros(g.shape), "dirichlet")
    import scipy.sparse.linalg as spla
    sol = spla.spsolve(A.tocsc(), b.ravel()).reshape(g.shape)
    assert np.allclose(sol, u, atol=1e-12)


@pytest.mark.parametrize("bc", ["dirichlet", "sommerfeld"])
def test_distributed_application_matches_serial(bc, rng):
    g = build_grid(17, 17)
    k = 10 + 20 * rng.random(g.shape)
    u = _rand(rng, g.shape)
    ref = apply_helmholtz(u, k, bc, g)

    def work(comm):
        v = views_for(g, 2, 3, comm)
        return v.gather(cslp_operator(v, k, bc, (1, 0)).apply(np.ascontiguousarray(v.local(u))))

    for got in run_threads(6, work):
        assert np.allclose(got, ref, rtol=0, atol=1e-12 * np.abs(ref).max())
