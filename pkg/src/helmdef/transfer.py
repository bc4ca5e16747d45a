"""Intergrid transfer operators.

Both transfer pairs are tensor products of 1D stencils and are applied as
two 1D passes. Restriction gathers fine values around the coincident fine
point ``2 ic`` (0-based); prolongation evaluates each fine point from the
coarse points whose footprint covers it. Taps outside the physical domain
are dropped without renormalising the remaining weights.

==========  =======================  ===========================
pair        restriction (1D)         prolongation (1D)
==========  =======================  ===========================
linear      [1 2 1] / 4              [1 2 1] / 2
high        [1 4 6 4 1] / 8          [1 4 6 4 1] / 8
==========  =======================  ===========================

The 2D full-weighting stencil is therefore ``[1 2 1; 2 4 2; 1 2 1] / 16``
and the high-order pair is ``[1 4 6 4 1] x [1 4 6 4 1] / 64`` in both
directions. For the linear pair ``R = P^T / 4``; for the high-order pair
``R = P^T``. Deflation uses ``P^T`` itself (:meth:`Transfer.restrict_adjoint`)
so that the coarse correction is ``Z E^{-1} Z^T`` with ``Z = P``.

With Dirichlet boundaries the transfers act on interior points only: the
boundary entries of the input are ignored and those of the output are
zero. This keeps ``R`` a scalar multiple of ``P^T`` so that the Galerkin
operator ``R A P`` stays consistent with the deflation space.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from .grid import NotCoarsenable, SubdomainView
from .operators import BoundaryCondition

__all__ = [
    "TRANSFER_STENCILS", "HIGH_ORDER_SIGMA", "LINEAR_SIGMA", "Transfer",
    "restrict_fw", "prolong_bilinear", "restrict_high_order", "prolong_high_order",
]

TRANSFER_STENCILS = {
    "linear": ((Fraction(1, 4), Fraction(1, 2), Fraction(1, 4)),
               (Fraction(1, 2), Fraction(1), Fraction(1, 2))),
    "high": (tuple(Fraction(c, 8) for c in (1, 4, 6, 4, 1)),
             tuple(Fraction(c, 8) for c in (1, 4, 6, 4, 1))),
}

# <P x, y> = sigma <x, R y>
LINEAR_SIGMA = 4.0
HIGH_ORDER_SIGMA = 1.0


def _take(a, axis, start, stop, step=1):
    return a[start:stop:step] if axis == 0 else a[:, start:stop:step]


def _restrict_axis(p, w, fine_lo, coarse_lo, ncoarse, weights, axis):
    """1D restriction along ``axis`` of a padded array (halo ``w``)."""
    r = len(weights) // 2
    base = 2 * coarse_lo - fine_lo + w
    out = None
    for t, wt in zip(range(-r, r + 1), weights):
        start = base + t
        term = wt * _take(p, axis, start, start + 2 * ncoarse - 1, 2)
        out = term if out is None else out + term
    return out


def _prolong_axis(q, fine_lo, fine_hi, coarse_lo, weights, axis):
    """1D prolongation along ``axis`` of a coarse array padded by one layer."""
    r = len(weights) // 2
    m = q.shape[axis]
    # zero-stuffed coarse values on the fine index set; z[s] <-> fine 2*(coarse_lo-1) - 2 + s
    shape = list(q.shape)
    shape[axis] = 2 * m + 4
    z = np.zeros(shape, dtype=q.dtype)
    if axis == 0:
        z[2:2 * m + 2:2] = q
    else:
        z[:, 2:2 * m + 2:2] = q
    g0 = 2 * (coarse_lo - 1) - 2
    nf = fine_hi - fine_lo
    out = None
    for t, wt in zip(range(-r, r + 1), weights):
        start = fine_lo - t - g0
        term = wt * _take(z, axis, start, start + nf)
        out = term if out is None else out + term
    return out


class Transfer:
    """Restriction/prolongation pair between a fine and a coarse view.

    Parameters
    ----------
    fine, coarse : SubdomainView
        ``coarse`` must be ``fine.coarsen()``.
    kind : {"linear", "high"}
    bc : BoundaryCondition or str
    """

    def __init__(self, fine: SubdomainView, coarse: SubdomainView, kind: str = "linear",
                 bc="dirichlet"):
        if not fine.grid.coarsenable and (fine.grid.nx % 2 == 0 or fine.grid.ny % 2 == 0):
            raise NotCoarsenable(f"fine grid {fine.grid} cannot be coarsened")
        if kind not in TRANSFER_STENCILS:
            raise ValueError(f"unknown transfer kind {kind!r}")
        self.fine, self.coarse, self.kind = fine, coarse, kind
        self.bc = BoundaryCondition.coerce(bc)
        rw, pw = TRANSFER_STENCILS[kind]
        self.rweights = [float(c) for c in rw]
        self.pweights = [float(c) for c in pw]
        self.fine_halo = len(rw) // 2
        self.sigma = LINEAR_SIGMA if kind == "linear" else HIGH_ORDER_SIGMA
        # restriction of a constant, i.e. the scale of R A P relative to A
        self.mass = float(sum(rw)) ** 2
        self.adjoint_mass = self.sigma * self.mass
        if self.bc.dirichlet:
            self._fmask = ~fine.boundary_mask()
            self._cmask = ~coarse.boundary_mask()
        if min(coarse.shape) < 1:
            raise NotCoarsenable("a worker would own no coarse points")

    def restrict(self, uf):
        f, c = self.fine, self.coarse
        w = self.fine_halo
        if self.bc.dirichlet:
            uf = uf * self._fmask
        p = f.pad(uf, w)
        t = _restrict_axis(p, w, f.i0, c.i0, c.shape[0], self.rweights, 0)
        out = _restrict_axis(t, w, f.j0, c.j0, c.shape[1], self.rweights, 1)
        if self.bc.dirichlet:
            out *= self._cmask
        return out

    def restrict_adjoint(self, uf):
        """``P^T uf``, the restriction scaled by ``sigma``."""
        out = self.restrict(uf)
        if self.sigma != 1.0:
            out *= self.sigma
        return out

    def prolong(self, uc):
        f, c = self.fine, self.coarse
        if self.bc.dirichlet:
            uc = uc * self._cmask
        q = c.pad(uc, 1)
        t = _prolong_axis(q, f.i0, f.i1, c.i0, self.pweights, 0)
        # t rows are fine-owned, columns still coarse-padded
        out = _prolong_axis(t, f.j0, f.j1, c.j0, self.pweights, 1)
        if self.bc.dirichlet:
            out *= self._fmask
        return out


def _serial_pair(u, kind, bc, coarse_grid_input=False):
    from .grid import Grid2D
    nx, ny = u.shape
    if coarse_grid_input:
        grid = Grid2D(2 * nx - 1, 2 * ny - 1, 0.0, 0.0, 1.0, (ny - 1) / (nx - 1))
    else:
        grid = Grid2D(nx, ny, 0.0, 0.0, 1.0, (ny - 1) / (nx - 1))
    fv = SubdomainView(grid)
    return Transfer(fv, fv.coarsen(), kind, bc)


def restrict_fw(uf, bc="sommerfeld"):
    """Serial full-weighting restriction of a global fine array."""
    return _serial_pair(uf, "linear", bc).restrict(np.asarray(uf, complex))


def prolong_bilinear(uc, bc="sommerfeld"):
    return _serial_pair(uc, "linear", bc, True).prolong(np.asarray(uc, complex))


def restrict_high_order(uf, bc="sommerfeld"):
    return _serial_pair(uf, "high", bc).restrict(np.asarray(uf, complex))


def prolong_high_order(uc, bc="sommerfeld"):
    return _serial_pair(uc, "high", bc, True).prolong(np.asarray(uc, complex))
