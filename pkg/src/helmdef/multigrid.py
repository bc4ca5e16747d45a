"""Multigrid approximation of the complex shifted Laplacian inverse.

One V(1,1) cycle with damped Jacobi smoothing, full-weighting restriction,
bilinear prolongation and 5-point re-discretisation on every level. The
wavenumber on a coarse level is the fine wavenumber at the coincident
points. The coarsest level is solved with unpreconditioned GMRES.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import NotCoarsenable, SubdomainView
from .krylov import MaxIterationsWarning, gmres
from .operators import BoundaryCondition, ZeroDiagonal, cslp_operator
from .transfer import Transfer

__all__ = [
    "CoarsestNoConvergence", "MGLevel", "MultigridHierarchy", "build_hierarchy",
    "damped_jacobi", "vcycle",
]

logger = logging.getLogger(__name__)


class CoarsestNoConvergence(RuntimeWarning):
    """Coarsest GMRES stopped before reaching its tolerance."""


@dataclass
class MGLevel:
    view: SubdomainView
    k: np.ndarray
    op: object
    inv_diag: np.ndarray
    transfer: Transfer | None = None  # to the next coarser level


def coarsen_k(k):
    """Wavenumber at the points coinciding with the coarse grid."""
    return np.ascontiguousarray(np.asarray(k)[::2, ::2])


class MultigridHierarchy:
    """Levels from finest to coarsest plus smoother and coarsest-solver settings.

    Parameters
    ----------
    levels : list of MGLevel
    omega : float
        Jacobi relaxation parameter.
    pre, post : int
        Smoothing steps.
    coarsest_tol, coarsest_maxit : float, int
        Coarsest-level GMRES stopping rule.
    freeze : bool
        Run every coarsest solve after the first one (since the last
        :meth:`reset`) for exactly the iteration count the first one needed,
        so that the cycle stays the same map during one outer solve.
    """

    def __init__(self, levels, omega=0.8, pre=1, post=1, coarsest_tol=1e-8,
                 coarsest_maxit=500, freeze=True):
        self.levels = levels
        self.omega = omega
        self.pre = pre
        self.post = post
        self.coarsest_tol = coarsest_tol
        self.coarsest_maxit = coarsest_maxit
        self.freeze = freeze
        self.frozen_iters = None
        self.cycles = 0
        self.coarsest_residuals = []

    @property
    def nlevels(self):
        return len(self.levels)

    def shapes(self):
        return [lvl.view.grid.shape for lvl in self.levels]

    def reset(self):
        self.frozen_iters = None
        self.cycles = 0
        self.coarsest_residuals = []

    def solve_coarsest(self, rhs):
        lvl = self.levels[-1]
        if self.freeze and self.frozen_iters is not None:
            tol, maxit = 0.0, self.frozen_iters
        else:
            tol, maxit = self.coarsest_tol, self.coarsest_maxit
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxIterationsWarning)
            x, rep = gmres(lvl.op.apply, rhs, None, tol, maxit, view=lvl.view, compute_true=False,
                           orth="cgs2")
        res = rep.history[-1]
        self.coarsest_residuals.append(res)
        if self.freeze and self.frozen_iters is None:
            self.frozen_iters = max(rep.iterations, 1)
        if tol > 0 and res > tol:
            warnings.warn(f"coarsest solve reached only {res:.3e} after {rep.iterations} "
                          "iterations", CoarsestNoConvergence, stacklevel=3)
        return x

    def __call__(self, rhs):
        return vcycle(rhs, self)


def build_hierarchy(view: SubdomainView, k, shift=(1.0, -0.5), bc="dirichlet",
                    min_block: int = 2, coarsest_points: int = 3, max_levels: int | None = None,
                    **kwargs) -> MultigridHierarchy:
    """Build the CSLP hierarchy by repeated standard coarsening.

    Coarsening continues while the grid can be halved, the coarse grid keeps
    at least ``coarsest_points`` points per direction and every worker keeps
    at least ``min_block`` x ``min_block`` points.
    """
    bc = BoundaryCondition.coerce(bc)
    k = np.asarray(k, dtype=float)
    if not view.grid.coarsenable:
        raise NotCoarsenable(f"grid {view.grid} cannot be coarsened")
    levels = []
    cur_view, cur_k = view, k
    while True:
        op = cslp_operator(cur_view, cur_k, bc, shift)
        d = op.diagonal
        if np.any(d == 0):
            raise ZeroDiagonal(f"zero diagonal in CSLP on {cur_view.grid}")
        lvl = MGLevel(cur_view, cur_k, op, 1.0 / d)
        levels.append(lvl)
        g = cur_view.grid
        if max_levels is not None and len(levels) >= max_levels:
            break
        if not (g.coarsenable and (g.nx + 1) // 2 >= coarsest_points
                and (g.ny + 1) // 2 >= coarsest_points and cur_view.can_coarsen(min_block)):
            break
        nxt = cur_view.coarsen()
        lvl.transfer = Transfer(cur_view, nxt, "linear", bc)
        cur_view, cur_k = nxt, coarsen_k(cur_k)
    if len(levels) < 2:
        raise NotCoarsenable("hierarchy needs at least two levels")
    logger.debug("CSLP hierarchy: %s", [lv.view.grid.shape for lv in levels])
    return MultigridHierarchy(levels, **kwargs)


def damped_jacobi(u, rhs, op, omega=0.8, steps=1, inv_diag=None):
    """``u <- u + omega D^{-1} (rhs - M u)`` repeated ``steps`` times."""
    if inv_diag is None:
        d = op.diagonal
        if np.any(d == 0):
            raise ZeroDiagonal("operator has a zero diagonal entry")
        inv_diag = 1.0 / d
    for _ in range(steps):
        u = u + omega * inv_diag * (rhs - op.apply(u))
    return u


def vcycle(rhs, H: MultigridHierarchy, level: int = 0):
    """One V(pre, post) cycle for the CSLP system on ``level``."""
    if level == 0:
        H.cycles += 1
    lvl = H.levels[level]
    if level == H.nlevels - 1:
        return H.solve_coarsest(rhs)
    u = np.zeros_like(rhs, dtype=complex)
    if H.pre:
        u = H.omega * lvl.inv_diag * rhs
        if H.pre > 1:
            u = damped_jacobi(u, rhs, lvl.op, H.omega, H.pre - 1, lvl.inv_diag)
    r = rhs - lvl.op.apply(u)
    rc = lvl.transfer.restrict(r)
    ec = vcycle(rc, H, level + 1)
    u = u + lvl.transfer.prolong(ec)
    if H.post:
        u = damped_jacobi(u, rhs, lvl.op, H.omega, H.post, lvl.inv_diag)
    return u
