"""Matrix-free stencil operators for the 2D Helmholtz problem.

Every operator in the package is a *variable-coefficient stencil*: for each
tap offset ``(di, dj)`` it keeps an array of coefficients over the owned
points of a worker, and ``apply`` forms

    v[i, j] = sum_{(di, dj)} c_{di,dj}[i, j] * u[i + di, j + dj]

from a halo-exchanged copy of ``u``. Boundary conditions are folded into
the coefficients when the operator is built:

* Dirichlet: boundary rows are identity rows and interior rows drop their
  taps onto boundary points (the boundary data goes to the right-hand side,
  see :func:`lift_dirichlet`).
* Sommerfeld: ghost values outside the domain are eliminated using a
  one-sided discretisation of ``du/dn - i k u = 0``,
  ``u_ghost = u_inner + 2 i k h u_boundary``.

The assembled sparse matrix in :func:`assemble_matrix` is built point by
point from the textbook formulas and serves as an independent test oracle.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Grid2D, SubdomainView

__all__ = [
    "OperatorError", "GridTooLarge", "ZeroDiagonal", "StaleHalo",
    "DIRICHLET", "SOMMERFELD", "BoundaryCondition", "Stencil",
    "LAPLACE_5PT", "StencilOperator", "build_stencil_operator",
    "helmholtz_operator", "cslp_operator", "apply_helmholtz", "apply_cslp",
    "assemble_matrix", "lift_dirichlet", "ORACLE_CAP",
]

logger = logging.getLogger(__name__)

ORACLE_CAP = 129


class OperatorError(ValueError):
    pass


class GridTooLarge(OperatorError):
    pass


class ZeroDiagonal(ArithmeticError):
    pass


class StaleHalo(RuntimeError):
    pass


DIRICHLET = "dirichlet"
SOMMERFELD = "sommerfeld"


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary condition on all four sides.

    ``g`` is optional Dirichlet data as a global ``(nx, ny)`` array; only its
    boundary entries are used.
    """

    kind: str = DIRICHLET
    g: np.ndarray | None = None

    def __post_init__(self):
        kind = self.kind.lower()
        if kind in ("sommerfeld1", "sommerfeld", "robin"):
            kind = SOMMERFELD
        if kind not in (DIRICHLET, SOMMERFELD):
            raise OperatorError(f"unknown boundary condition {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.g is not None and not np.all(np.isfinite(self.g)):
            raise OperatorError("Dirichlet data must be finite")

    @property
    def dirichlet(self) -> bool:
        return self.kind == DIRICHLET

    @classmethod
    def coerce(cls, bc):
        return bc if isinstance(bc, cls) else cls(str(bc))


@dataclass(frozen=True)
class Stencil:
    """Constant stencil: dense coefficients around a centre, times ``scale``.

    ``coeffs[a, b]`` multiplies the value at offset
    ``(a - center[0], b - center[1])``.
    """

    coeffs: np.ndarray
    center: tuple | None = None
    scale: object = 1

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.ndim == 1:
            c = c[:, None]
        if c.shape[0] % 2 == 0 or c.shape[1] % 2 == 0:
            raise OperatorError(f"stencil footprint {c.shape} must be odd")
        object.__setattr__(self, "coeffs", c)
        if self.center is None:
            object.__setattr__(self, "center", (c.shape[0] // 2, c.shape[1] // 2))

    @property
    def radius(self) -> int:
        return max(max(self.center), self.coeffs.shape[0] - 1 - self.center[0],
                   self.coeffs.shape[1] - 1 - self.center[1])

    def taps(self):
        """Nonzero ``{(di, dj): scale * coeff}``."""
        out = {}
        ci, cj = self.center
        for a in range(self.coeffs.shape[0]):
            for b in range(self.coeffs.shape[1]):
                v = self.coeffs[a, b]
                if v != 0:
                    out[(a - ci, b - cj)] = self.scale * v
        return out

    def total(self):
        return self.scale * self.coeffs.sum()


LAPLACE_5PT = Stencil(np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]]))
_MASS_1PT = Stencil(np.array([[1]]))


class StencilOperator:
    """Variable-coefficient stencil acting on a worker's owned block.

    Parameters
    ----------
    view : SubdomainView
    coeffs : dict
        ``{(di, dj): array}`` with arrays of the owned-block shape.
    radius : int
        Halo width needed by the taps.
    """

    def __init__(self, view: SubdomainView, coeffs: dict, radius: int, name: str = ""):
        self.view = view
        self.radius = int(radius)
        self.name = name
        self.coeffs = {d: np.ascontiguousarray(c, dtype=np.complex128)
                       for d, c in coeffs.items() if np.any(c != 0)}
        self.nnz_per_row = len(self.coeffs)

    @property
    def diagonal(self):
        c = self.coeffs.get((0, 0))
        return np.zeros(self.view.shape, complex) if c is None else c

    def apply(self, u, out=None):
        w = self.radius
        ni, nj = self.view.shape
        p = self.view.pad(u, w)
        v = np.zeros((ni, nj), dtype=np.complex128) if out is None else out
        if out is not None:
            v[...] = 0
        for (di, dj), c in self.coeffs.items():
            v += c * p[w + di:w + di + ni, w + dj:w + dj + nj]
        return v

    __call__ = apply

    def scaled(self, factor):
        return StencilOperator(self.view, {d: factor * c for d, c in self.coeffs.items()},
                               self.radius, self.name)


# -- coefficient builder ---------------------------------------------------

def _ghost_expand(t, bc_dir, k, H, nx, ny, ghost, corner, out, weight):
    """Distribute ``weight`` at position ``t`` onto in-domain points.

    ``out`` maps global indices to accumulated weights.
    """
    ti, tj = t
    xo = ti < 0 or ti >= nx
    yo = tj < 0 or tj >= ny
    if not xo and not yo:
        out[t] = out.get(t, 0) + weight
        return
    if xo and yo and corner == "average":
        # diagonal ghost: mean of the two adjacent edge ghosts
        bi = 0 if ti < 0 else nx - 1
        bj = 0 if tj < 0 else ny - 1
        _ghost_expand((ti, bj), bc_dir, k, H, nx, ny, ghost, corner, out, 0.5 * weight)
        _ghost_expand((bi, tj), bc_dir, k, H, nx, ny, ghost, corner, out, 0.5 * weight)
        return
    if xo:
        b = (0, tj) if ti < 0 else (nx - 1, tj)
        inner = (1, tj) if ti < 0 else (nx - 2, tj)
        if ti < -1 or ti > nx:
            raise OperatorError("ghost elimination supports one ghost layer")
    else:
        b = (ti, 0) if tj < 0 else (ti, ny - 1)
        inner = (ti, 1) if tj < 0 else (ti, ny - 2)
        if tj < -1 or tj > ny:
            raise OperatorError("ghost elimination supports one ghost layer")
    if bc_dir:
        wb, wi = 2.0, -1.0
    else:
        kb = k[min(max(b[0], 0), nx - 1), min(max(b[1], 0), ny - 1)]
        wb = 2j * kb * H
        if ghost == "so4":
            wb *= 1.0 - (kb * H) ** 2 / 6.0
        wi = 1.0
    _ghost_expand(b, bc_dir, k, H, nx, ny, ghost, corner, out, wb * weight)
    _ghost_expand(inner, bc_dir, k, H, nx, ny, ghost, corner, out, wi * weight)


def _o2_taps(i, j, k, H, nx, ny, dirichlet, shift):
    """Second-order boundary-aware 5-point row at global ``(i, j)``."""
    kk = k[i, j]
    if dirichlet:
        if i in (0, nx - 1) or j in (0, ny - 1):
            return {(0, 0): 1.0}
        row = {(0, 0): (4.0 - shift * (kk * H) ** 2) / H ** 2}
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ti, tj = i + d[0], j + d[1]
            if 0 < ti < nx - 1 and 0 < tj < ny - 1:
                row[d] = -1.0 / H ** 2
        return row
    row = {(0, 0): (4.0 - shift * (kk * H) ** 2) / H ** 2}
    for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ti, tj = i + d[0], j + d[1]
        if 0 <= ti < nx and 0 <= tj < ny:
            row[d] = row.get(d, 0) - 1.0 / H ** 2
        else:
            # u_ghost = u_inner + 2ikH u_b
            opp = (-d[0], -d[1])
            row[opp] = row.get(opp, 0) - 1.0 / H ** 2
            row[(0, 0)] -= 2j * kk * H / H ** 2
    return row


def build_stencil_operator(view: SubdomainView, k, lap: Stencil, mass: Stencil, bc,
                           shift: complex = 1.0, mass_mode: str = "tap", fallback_layers: int = 1,
                           ghost: str = "so2", corner: str = "sequential", scale: float = 1.0,
                           fallback_scale: float | None = None, ghost_k_zero: bool = True,
                           name: str = "") -> StencilOperator:
    """Build a stencil operator ``scale * (lap / H^2 - shift * mass(k^2))``.

    Parameters
    ----------
    view : SubdomainView
        Window whose owned points receive coefficients.
    k : ndarray
        Global real wavenumber array for this grid.
    lap, mass : Stencil
        Laplacian part (without the ``1/H^2`` factor) and mass part.
    bc : BoundaryCondition or str
    shift : complex
        Multiplier of the ``k^2`` term (1 for Helmholtz, ``b1 + i b2`` for CSLP).
    mass_mode : {"tap", "center"}
        Whether each mass tap uses the wavenumber at the tap or at the centre.
    fallback_layers : int
        Points closer than this to the boundary use the second-order
        5-point row with the boundary condition built in.
    ghost : {"so2", "so4"}
        Sommerfeld ghost rule used where the full stencil pokes outside.
    corner : {"sequential", "average"}
        How a diagonal ghost beyond a corner is formed.
    scale, fallback_scale : float
        Multipliers of the full-stencil rows and of the fallback rows.
    ghost_k_zero : bool
        In ``tap`` mass mode, ghost taps carry zero wavenumber.
    """
    bc = BoundaryCondition.coerce(bc)
    dirichlet = bc.dirichlet
    grid = view.grid
    nx, ny = grid.shape
    H = grid.h
    k = np.asarray(k, dtype=float)
    fallback_scale = scale if fallback_scale is None else fallback_scale
    lap_taps = lap.taps()
    mass_taps = mass.taps()
    offsets = set(lap_taps) | set(mass_taps)
    R = max(max(abs(a), abs(b)) for a, b in offsets)
    fallback_layers = max(fallback_layers, 1 if dirichlet else 0)

    ni, nj = view.shape
    I, J = view.global_indices
    dist = view.distance_to_boundary()
    k2pad = view.local_padded(k ** 2, R, fill=0.0)
    kloc = view.local(k)

    coeffs = {}

    def add(d, mask, values):
        arr = coeffs.setdefault(d, np.zeros((ni, nj), dtype=np.complex128))
        arr[mask] += np.broadcast_to(values, (ni, nj))[mask]

    # full stencil where it fits
    full = dist >= R
    if dirichlet:
        full &= dist >= 1
    for d in offsets:
        c = lap_taps.get(d, 0) / H ** 2
        m = mass_taps.get(d, 0)
        if mass_mode == "tap":
            kt = k2pad[R + d[0]:R + d[0] + ni, R + d[1]:R + d[1] + nj]
        else:
            kt = kloc ** 2
        vals = scale * (c - shift * m * kt)
        mask = full
        if dirichlet:
            # taps landing on boundary points are eliminated
            td = np.minimum(np.minimum(I + d[0], nx - 1 - I - d[0]),
                            np.minimum(J + d[1], ny - 1 - J - d[1]))
            mask = full & (td > 0)
        add(d, mask, vals)

    # second-order rows near the boundary
    fb = dist < fallback_layers
    for i, j in zip(I[fb], J[fb]):
        a, b = i - view.i0, j - view.j0
        for d, v in _o2_taps(i, j, k, H, nx, ny, dirichlet, shift).items():
            coeffs.setdefault(d, np.zeros((ni, nj), dtype=np.complex128))[a, b] += fallback_scale * v

    # full stencil with ghost elimination in between
    gz = ~full & ~fb
    for i, j in zip(I[gz], J[gz]):
        a, b = i - view.i0, j - view.j0
        acc = {}
        for d in offsets:
            ti, tj = i + d[0], j + d[1]
            inside = 0 <= ti < nx and 0 <= tj < ny
            c = lap_taps.get(d, 0) / H ** 2
            m = mass_taps.get(d, 0)
            if mass_mode == "tap":
                kt2 = k[ti, tj] ** 2 if inside else (0.0 if ghost_k_zero else
                                                     k[min(max(ti, 0), nx - 1), min(max(tj, 0), ny - 1)] ** 2)
            else:
                kt2 = k[i, j] ** 2
            wgt = scale * (c - shift * m * kt2)
            if wgt == 0:
                continue
            _ghost_expand((ti, tj), dirichlet, k, H, nx, ny, ghost, corner, acc, wgt)
        for (ti, tj), v in acc.items():
            if dirichlet and (ti in (0, nx - 1) or tj in (0, ny - 1)):
                continue
            d = (ti - i, tj - j)
            coeffs.setdefault(d, np.zeros((ni, nj), dtype=np.complex128))[a, b] += v

    radius = max([max(abs(a), abs(b)) for a, b in coeffs] + [1])
    return StencilOperator(view, coeffs, radius, name=name)


def _as_view(view_or_grid):
    return view_or_grid if isinstance(view_or_grid, SubdomainView) else SubdomainView(view_or_grid)


def helmholtz_operator(view, k, bc) -> StencilOperator:
    """Second-order 5-point Helmholtz operator ``-Lap - k^2``."""
    return build_stencil_operator(_as_view(view), k, LAPLACE_5PT, _MASS_1PT, bc, shift=1.0,
                                  name="helmholtz")


def cslp_operator(view, k, bc, shift=(1.0, -0.5)) -> StencilOperator:
    """Complex shifted Laplacian ``-Lap - (b1 + i b2) k^2`` (Sommerfeld terms unshifted)."""
    z = complex(shift[0], shift[1])
    return build_stencil_operator(_as_view(view), k, LAPLACE_5PT, _MASS_1PT, bc, shift=z,
                                  name="cslp")


def apply_helmholtz(u, k, bc, grid: Grid2D | None = None):
    """Serial convenience: ``A u`` for a global field ``u``."""
    grid = grid or Grid2D(u.shape[0], u.shape[1], 0.0, 0.0, 1.0, (u.shape[1] - 1) / (u.shape[0] - 1))
    return helmholtz_operator(SubdomainView(grid), k, bc).apply(np.asarray(u, complex))


def apply_cslp(u, k, shift, bc, grid: Grid2D | None = None):
    grid = grid or Grid2D(u.shape[0], u.shape[1], 0.0, 0.0, 1.0, (u.shape[1] - 1) / (u.shape[0] - 1))
    return cslp_operator(SubdomainView(grid), k, bc, shift).apply(np.asarray(u, complex))


# -- oracle ------------------------------------------------------------------

def assemble_matrix(grid: Grid2D, k, bc, shift=None, cap: int = ORACLE_CAP):
    """Sparse matrix of the 5-point operator, row by row.

    Unknowns are numbered ``n = i * ny + j`` (matching ``u.ravel()`` of an
    ``[i, j]`` array). ``shift=None`` gives the Helmholtz matrix, otherwise
    the complex shifted Laplacian with ``shift = (b1, b2)``.
    """
    nx, ny = grid.shape
    if nx > cap or ny > cap:
        raise GridTooLarge(f"oracle assembly capped at {cap}x{cap}, got {nx}x{ny}")
    bc = BoundaryCondition.coerce(bc)
    k = np.broadcast_to(np.asarray(k, float), grid.shape)
    h = grid.h
    z = 1.0 if shift is None else complex(shift[0], shift[1])
    rows, cols, vals = [], [], []

    def idx(i, j):
        return i * ny + j

    for i in range(nx):
        for j in range(ny):
            on_x = i == 0 or i == nx - 1
            on_y = j == 0 or j == ny - 1
            r = idx(i, j)
            if bc.dirichlet:
                if on_x or on_y:
                    rows.append(r); cols.append(r); vals.append(1.0)
                    continue
                rows.append(r); cols.append(r); vals.append((4 - z * k[i, j] ** 2 * h ** 2) / h ** 2)
                for ii, jj in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                    if 0 < ii < nx - 1 and 0 < jj < ny - 1:
                        rows.append(r); cols.append(idx(ii, jj)); vals.append(-1 / h ** 2)
                continue
            nsides = int(on_x) + int(on_y)
            diag = (4 - z * k[i, j] ** 2 * h ** 2 - 2j * nsides * k[i, j] * h) / h ** 2
            rows.append(r); cols.append(r); vals.append(diag)
            # x direction
            if i == 0:
                xn = [(1, -2.0)]
            elif i == nx - 1:
                xn = [(nx - 2, -2.0)]
            else:
                xn = [(i - 1, -1.0), (i + 1, -1.0)]
            if j == 0:
                yn = [(1, -2.0)]
            elif j == ny - 1:
                yn = [(ny - 2, -2.0)]
            else:
                yn = [(j - 1, -1.0), (j + 1, -1.0)]
            for ii, w in xn:
                rows.append(r); cols.append(idx(ii, j)); vals.append(w / h ** 2)
            for jj, w in yn:
                rows.append(r); cols.append(idx(i, jj)); vals.append(w / h ** 2)
    n = nx * ny
    return sp.csr_matrix((np.asarray(vals, complex), (rows, cols)), shape=(n, n))


def lift_dirichlet(b, g, grid: Grid2D):
    """Move Dirichlet data ``g`` into the right-hand side ``b`` (global arrays).

    Boundary rows receive ``g``; interior rows next to the boundary receive
    ``g / h^2`` from each eliminated neighbour.
    """
    b = np.array(b, dtype=np.complex128, copy=True)
    g = np.asarray(g, dtype=np.complex128)
    h2 = grid.h ** 2
    inner = (slice(1, -1), slice(1, -1))
    gb = np.zeros_like(g)
    gb[0, :], gb[-1, :], gb[:, 0], gb[:, -1] = g[0, :], g[-1, :], g[:, 0], g[:, -1]
    nb = np.zeros_like(g)
    nb[1:-1, 1:-1] = (gb[:-2, 1:-1] + gb[2:, 1:-1] + gb[1:-1, :-2] + gb[1:-1, 2:])
    b[inner] += nb[inner] / h2
    b[0, :], b[-1, :], b[:, 0], b[:, -1] = g[0, :], g[-1, :], g[:, 0], g[:, -1]
    return b
