import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helmdef.grid import (AnisotropicSpacing, DegenerateDomain, InfeasiblePartition,
                          NotCoarsenable, SubdomainView, TooManyWorkers, build_grid,
                          coarse_to_fine, coarsen_grid, partition)

from conftest import rect_grid, run_threads, views_for


def test_build_grid_mesh_width():
    assert build_grid(33, 33).h == pytest.approx(1 / 32, rel=1e-14)
    assert build_grid(3, 3).h == 0.5


def test_wedge_grid_spacing():
    g = build_grid(289, 481, (0, -1000, 600, 0))
    assert g.h == pytest.approx(600 / 288, rel=1e-12)
    assert g.h == pytest.approx(1000 / 480, rel=1e-12)


def test_build_grid_rejects_bad_input():
    with pytest.raises(AnisotropicSpacing):
        build_grid(33, 17)
    with pytest.raises(DegenerateDomain):
        build_grid(2, 5)
    with pytest.raises(DegenerateDomain):
        build_grid(5, 5, (0, 0, 0, 1))


def test_coarsening():
    g = coarsen_grid(build_grid(33, 33))
    assert g.shape == (17, 17) and g.h == pytest.approx(1 / 16)
    assert coarsen_grid(build_grid(65, 65)).shape == (33, 33)
    assert coarse_to_fine(3, 5) == (5, 9)
    with pytest.raises(NotCoarsenable):
        coarsen_grid(build_grid(4, 4, (0, 0, 1, 1)))


def test_partition_examples():
    p = partition(build_grid(33, 33), 2, 2)
    assert [hi - lo for lo, hi in p.xranges] == [17, 16]
    assert [hi - lo for lo, hi in p.yranges] == [17, 16]
    single = partition(build_grid(33, 33), 1, 1)
    assert single.owned(0) == (0, 33, 0, 33)
    big = partition(build_grid(961, 961), 6, 6)
    assert big.nworkers == 36
    assert {hi - lo for lo, hi in big.xranges} <= {160, 161}


def test_partition_errors():
    with pytest.raises(TooManyWorkers):
        partition(build_grid(5, 5), 6, 1)
    with pytest.raises(InfeasiblePartition):
        partition(build_grid(5, 5), 0, 1)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(3, 200), m=st.integers(3, 200), px=st.integers(1, 8), py=st.integers(1, 8))
def test_partition_tiles_grid(n, m, px, py):
    if px > n or py > m:
        return
    part = partition(rect_grid(n, m), px, py)
    cover = np.zeros((n, m), dtype=int)
    for w in range(part.nworkers):
        i0, i1, j0, j1 = part.owned(w)
        cover[i0:i1, j0:j1] += 1
        assert part.owner(i0, j0) == w
    assert np.all(cover == 1)
    sizes = [hi - lo for lo, hi in part.xranges]
    assert max(sizes) - min(sizes) <= 1
    assert sizes == sorted(sizes, reverse=True)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 60).map(lambda t: 2 * t + 1), px=st.integers(1, 5))
def test_coarse_partition_follows_fine_owner(n, px):
    if px > n:
        return
    part = partition(rect_grid(n, n), px, 1)
    coarse = part.coarsen()
    for c, (lo, hi) in enumerate(coarse.xranges):
        for ic in range(lo, hi):
            flo, fhi = part.xranges[c]
            assert flo <= 2 * ic < fhi


def test_serial_pad_zero_outside_domain(rng):
    g = build_grid(9, 9)
    v = SubdomainView(g)
    u = rng.standard_normal(g.shape)
    p = v.pad(u, 2)
    assert np.array_equal(p[2:-2, 2:-2], u)
    assert not p[:2].any() and not p[:, -2:].any()
    assert np.array_equal(p, v.local_padded(u, 2))


@pytest.mark.parametrize("px,py,w", [(2, 2, 1), (2, 3, 2), (3, 1, 3)])
def test_halo_exchange_matches_global_slices(px, py, w):
    g = build_grid(17, 17)
    glob = np.arange(g.size, dtype=float).reshape(g.shape) + 1.0

    def work(comm):
        v = views_for(g, px, py, comm)
        return v.pad(np.ascontiguousarray(v.local(glob)), w), v.local_padded(glob, w)

    for padded, expected in run_threads(px * py, work):
        assert np.array_equal(padded, expected)


def test_distributed_reductions_match_serial(rng):
    g = build_grid(17, 17)
    a = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    b = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)

    def work(comm):
        v = views_for(g, 2, 3, comm)
        return v.dot(v.local(a), v.local(b)), v.norm(v.local(a)), v.gather(v.local(a))

    ref = np.vdot(a, b)
    for d, nrm, full in run_threads(6, work):
        assert d == pytest.approx(ref, rel=1e-13)
        assert nrm == pytest.approx(np.linalg.norm(a), rel=1e-13)
        assert np.array_equal(full, a)


def test_reductions_identical_on_every_worker(rng):
    g = build_grid(33, 33)
    a = rng.standard_normal(g.shape)

    def work(comm):
        v = views_for(g, 2, 2, comm)
        return v.dot(v.local(a), v.local(a))

    vals = run_threads(4, work)
    assert all(x == vals[0] for x in vals)


def test_can_coarsen_stops_at_small_blocks():
    g = build_grid(33, 33)

    def work(comm):
        v = views_for(g, 4, 4, comm)
        depth = 1
        while v.can_coarsen(2):
            v = v.coarsen()
            depth += 1
        return depth

    depths = run_threads(16, work)
    assert len(set(depths)) == 1
    assert depths[0] < 5  # serial goes 33, 17, 9, 5, 3
