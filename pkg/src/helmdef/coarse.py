"""Coarse-grid Helmholtz operators for two-level deflation.

Two families are provided:

* Galerkin operators ``P^T A_h P`` applied either step by step
  (``StrGlk``: prolong, fine operator, restrict) or by recomposing the
  coarse stencil from the fine stencil and the transfer stencils on every
  application (``StclOpGlk``).
* Re-discretisations on the coarse grid: second, fourth and sixth order
  central differences (``ReD_O2``/``ReD_O4``/``ReD_O6``), a fourth-order
  compact scheme (``ReD_cmpO4``), a nine-point scheme tuned to match the
  near-zero eigenvalue of the fine operator (``ReD_9ptO2``), and the 5x5
  stencils obtained by composing the high-order transfers with the
  5-point fine operator (``ReD_Glk1``, ``ReD_Glk2``), which differ in their
  treatment of the second grid line.

Re-discretised operators approximate ``-Lap - k^2`` at mesh width ``2h``
times ``scale`` (default 1). The Glk stencils are used exactly as composed,
so their interior rows carry the factor 4 that ``P^T A_h P`` has relative
to ``-Lap - k^2``; their second-order boundary rows are at ``scale``.
``scale="auto"`` rescales everything to the Galerkin level instead.
"""
from __future__ import annotations

import logging
import math
from fractions import Fraction

import numpy as np

from .grid import SubdomainView
from .operators import (BoundaryCondition, Stencil, StencilOperator, LAPLACE_5PT,
                        build_stencil_operator)
from .transfer import TRANSFER_STENCILS, Transfer

__all__ = [
    "VARIANTS", "CoarseError", "MissingFineContext", "CompositionMismatch",
    "IncompatibleFootprints", "SingularSystem",
    "normalize_variant", "stencil_compose", "galerkin_compose", "derive_red_glk_stencils",
    "GLK_LAPLACE_PRINTED", "GLK_MASS_PRINTED", "O4_LAPLACE", "O6_LAPLACE",
    "probe_matrix", "singer_turkel_coefficients", "find_min_mode", "optimize_9pt_coefficients",
    "NINE_POINT_REFERENCE_K", "nine_point_eigenvalue", "flops_estimate", "StrGlkOperator",
    "StclOpGlkOperator",
    "build_coarse_operator", "variant_halo",
]

logger = logging.getLogger(__name__)

VARIANTS = ("StrGlk", "StclOpGlk", "ReD_O2", "ReD_O4", "ReD_O6", "ReD_cmpO4",
            "ReD_Glk1", "ReD_Glk2", "ReD_9ptO2")

_HALO = {"StrGlk": 0, "StclOpGlk": 2, "ReD_O2": 1, "ReD_O4": 2, "ReD_O6": 3,
         "ReD_cmpO4": 1, "ReD_Glk1": 2, "ReD_Glk2": 2, "ReD_9ptO2": 1}


class CoarseError(ValueError):
    pass


class MissingFineContext(CoarseError):
    pass


class CompositionMismatch(AssertionError):
    pass


class IncompatibleFootprints(CoarseError):
    pass


class SingularSystem(ArithmeticError):
    pass


def normalize_variant(name: str) -> str:
    key = str(name).replace("-", "").replace("_", "").replace(" ", "").lower()
    key = key.replace("o", "o")
    for v in VARIANTS:
        if v.replace("_", "").lower() == key:
            return v
    aliases = {"galerkin": "StrGlk", "strglk": "StrGlk", "stcl": "StclOpGlk",
               "o2": "ReD_O2", "redo2": "ReD_O2", "redglk": "ReD_Glk2"}
    if key in aliases:
        return aliases[key]
    raise CoarseError(f"unknown coarse operator {name!r}; choose from {', '.join(VARIANTS)}")


def variant_halo(variant: str) -> int:
    return _HALO[normalize_variant(variant)]


# -- stencil algebra ----------------------------------------------------------

def _as_taps(st: Stencil) -> dict:
    return st.taps()


def _to_stencil(taps: dict) -> Stencil:
    if not taps:
        return Stencil(np.zeros((1, 1), dtype=object))
    r0 = max(abs(a) for a, _ in taps)
    r1 = max(abs(b) for _, b in taps)
    c = np.full((2 * r0 + 1, 2 * r1 + 1), Fraction(0), dtype=object)
    for (a, b), v in taps.items():
        c[a + r0, b + r1] = v
    return Stencil(c, (r0, r1))


def stencil_compose(A: Stencil, B: Stencil) -> Stencil:
    """Stencil of the product ``B A`` of two constant-coefficient operators on one grid.

    For symmetric stencils this is the discrete convolution of the two
    coefficient patterns, which reduces to the familiar 1D rule
    ``[a_l a_0 a_r] (+) [b_l b_0 b_r] = [a_l b_r, a_l b_0 + a_0 b_r, ...]``.
    """
    ta, tb = _as_taps(A), _as_taps(B)
    if A.coeffs.ndim != B.coeffs.ndim:
        raise IncompatibleFootprints("stencils must have the same dimension")
    out = {}
    for (a0, a1), va in ta.items():
        for (b0, b1), vb in tb.items():
            d = (a0 + b0, a1 + b1)
            out[d] = out.get(d, 0) + va * vb
    return _to_stencil({d: v for d, v in out.items() if v != 0})


def galerkin_compose(R: Stencil, A: Stencil, P: Stencil) -> Stencil:
    """Coarse stencil of ``R A P`` for standard coarsening.

    ``R`` gathers fine values ``y(2c + t)`` with weights ``R[t]``; ``P``
    gives fine point ``f`` the value ``sum_c P[f - 2c] x(c)``. The coarse
    stencil at offset ``d`` is ``sum_{t,s} R[t] A[s] P[t + s - 2d]``.
    """
    tr, ta, tp = _as_taps(R), _as_taps(A), _as_taps(P)
    out = {}
    for (t0, t1), vr in tr.items():
        for (s0, s1), va in ta.items():
            for (p0, p1), vp in tp.items():
                # p = t + s - 2d  ->  d = (t + s - p) / 2
                e0, e1 = t0 + s0 - p0, t1 + s1 - p1
                if e0 % 2 or e1 % 2:
                    continue
                d = (e0 // 2, e1 // 2)
                out[d] = out.get(d, 0) + vr * va * vp
    return _to_stencil({d: v for d, v in out.items() if v != 0})


def _tensor(w):
    w = [Fraction(x) for x in w]
    return np.array([[a * b for b in w] for a in w], dtype=object)


def _exact_laplace():
    return Stencil(np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], dtype=object) * Fraction(1))


GLK_LAPLACE_PRINTED = np.array([
    [-3, -44, -98, -44, -3],
    [-44, -112, 56, -112, -44],
    [-98, 56, 980, 56, -98],
    [-44, -112, 56, -112, -44],
    [-3, -44, -98, -44, -3]])
"""Integer pattern of the composed Laplacian, in units of ``1 / (256 (2h)^2)``."""

GLK_MASS_PRINTED = np.outer([1, 28, 70, 28, 1], [1, 28, 70, 28, 1])
"""Integer pattern of the composed mass term, in units of ``k^2 / 64^2``."""


def derive_red_glk_stencils():
    """Compose the high-order transfers with the 5-point Laplacian and identity.

    Returns
    -------
    laplace, mass : Stencil
        Exact rational stencils; ``laplace`` is in units of ``1/h^2`` (fine
        mesh width) and ``mass`` in units of ``k^2``.

    Raises
    ------
    CompositionMismatch
        If the composition does not reproduce the reference integer patterns.
    """
    rw, pw = TRANSFER_STENCILS["high"]
    R = Stencil(_tensor(rw))
    P = Stencil(_tensor(pw))
    lap = galerkin_compose(R, _exact_laplace(), P)
    mass = galerkin_compose(R, Stencil(np.array([[Fraction(1)]], dtype=object)), P)
    # 1/(256 (2h)^2) = 1/(1024 h^2)
    lap_int = lap.coeffs * 1024
    mass_int = mass.coeffs * 64 ** 2
    if lap_int.shape != (5, 5) or any(v.denominator != 1 for v in lap_int.ravel()) or \
            not np.array_equal(lap_int.astype(int), GLK_LAPLACE_PRINTED):
        raise CompositionMismatch(f"composed Laplacian differs:\n{lap_int}")
    if mass_int.shape != (5, 5) or not np.array_equal(mass_int.astype(int), GLK_MASS_PRINTED):
        raise CompositionMismatch(f"composed mass term differs:\n{mass_int}")
    return lap, mass


def _glk_stencils():
    """Composed stencils in units of ``1/H^2`` and ``k^2`` (four times ``-Lap - k^2``)."""
    lap = GLK_LAPLACE_PRINTED / 256.0
    mass = GLK_MASS_PRINTED / 64.0 ** 2
    return Stencil(lap), Stencil(mass)


def _cross(w1d):
    w1d = np.asarray(w1d, dtype=float)
    n = len(w1d)
    c = np.zeros((n, n))
    c[n // 2, :] += w1d
    c[:, n // 2] += w1d
    return c


# -(d2/dx2) coefficients
O4_LAPLACE = np.array([1.0, -16.0, 30.0, -16.0, 1.0]) / 12.0
O6_LAPLACE = np.array([-2.0, 27.0, -270.0, 490.0, -270.0, 27.0, -2.0]) / 180.0


def singer_turkel_coefficients(gamma: float = 1.0):
    """``(a0, as, ac, b0, bs, bc)`` of the fourth-order compact scheme."""
    return (10.0 / 3.0, -2.0 / 3.0, -1.0 / 6.0,
            2.0 / 3.0 + gamma / 36.0, 1.0 / 12.0 - gamma / 72.0, gamma / 144.0)


def _nine_point(a0, as_, ac, b0, bs, bc):
    lap = np.array([[ac, as_, ac], [as_, a0, as_], [ac, as_, ac]], dtype=float)
    mass = np.array([[bc, bs, bc], [bs, b0, bs], [bc, bs, bc]], dtype=float)
    return Stencil(lap), Stencil(mass)


# -- nine-point eigenvalue alignment -----------------------------------------

def find_min_mode(k: float, h: float | None = None):
    """Mode ``(i, j)`` minimising ``|(i^2 + j^2) pi^2 - k^2|`` with ``i <= j``.

    The search is exhaustive over ``1 <= i <= j <= n - 1`` with ``n = 1/h``
    (or over all modes that can come near ``k^2`` when ``h`` is None).

    Returns
    -------
    (i, j, value)
    """
    jmax = int(math.ceil(k / math.pi)) + 2
    if h is not None:
        jmax = min(jmax, int(round(1.0 / h)) - 1)
    best = None
    for i in range(1, jmax + 1):
        for j in range(i, jmax + 1):
            v = (i * i + j * j) * math.pi ** 2 - k * k
            if best is None or abs(v) < abs(best[2]) - 1e-12:
                best = (i, j, v)
    return best


def nine_point_eigenvalue(coeffs, k, H, p, q):
    """Eigenvalue of the nine-point operator for Dirichlet mode ``(p, q)``."""
    a0, as_, ac, b0, bs, bc = coeffs
    cp, cq = math.cos(p * math.pi * H), math.cos(q * math.pi * H)
    k2H2 = (k * H) ** 2
    return ((a0 - b0 * k2H2) + 2 * (as_ - bs * k2H2) * (cp + cq)
            + 4 * (ac - bc * k2H2) * cp * cq) / H ** 2


def optimize_9pt_coefficients(k: float, h_ref: float = 1e-4, p: int | None = None,
                              q: int | None = None, target: float | None = None,
                              decimals: int | None = 3, b=(1.0, 0.0, 0.0)):
    """Nine-point coefficients whose near-zero eigenvalue matches the fine operator.

    Solves the two consistency constraints ``a0 + 4 as + 4 ac = 0`` and
    ``as + 2 ac = -1`` together with ``lambda_H^{p,q} = target`` on the
    coarse grid ``H = 2 h_ref``. The mass coefficients ``(b0, bs, bc)`` are
    fixed. By default ``(p, q)`` is the mode from :func:`find_min_mode`
    and ``target`` is its continuous eigenvalue rounded to one decimal.
    With ``decimals`` set, ``ac`` is rounded and ``a0``, ``as`` are
    recomputed from the constraints so that they hold exactly.

    Returns
    -------
    tuple
        ``(a0, as, ac, b0, bs, bc)``
    """
    if k <= 0 or h_ref <= 0:
        raise ValueError("k and h_ref must be positive")
    if p is None or q is None:
        p, q, v = find_min_mode(k)
        if target is None:
            target = round(v, 1)
    elif target is None:
        target = round((p * p + q * q) * math.pi ** 2 - k * k, 1)
    b0, bs, bc = b
    H = 2.0 * h_ref
    cp, cq = math.cos(p * math.pi * H), math.cos(q * math.pi * H)
    M = np.array([[1.0, 4.0, 4.0], [0.0, 1.0, 2.0], [1.0, 2.0 * (cp + cq), 4.0 * cp * cq]])
    k2H2 = (k * H) ** 2
    rhs = np.array([0.0, -1.0,
                    target * H ** 2 + k2H2 * (b0 + 2 * bs * (cp + cq) + 4 * bc * cp * cq)])
    det = np.linalg.det(M)
    if abs(det) < 1e-14:
        raise SingularSystem(f"alignment equation is dependent on the constraints (det={det:.3e})")
    a0, as_, ac = np.linalg.solve(M, rhs)
    if decimals is not None:
        ac = round(ac, decimals)
        as_ = -1.0 - 2.0 * ac
        a0 = -4.0 * as_ - 4.0 * ac
    return (float(a0), float(as_), float(ac), float(b0), float(bs), float(bc))


NINE_POINT_REFERENCE_K = 80.0
"""Wavenumber at which the default nine-point coefficients are aligned."""


# -- FLOP model ------------------------------------------------------------------

def flops_estimate(variant: str, M: int, N: int) -> int:
    """FLOPs of one coarse operator application (``2 * nnz`` per matrix).

    ``M`` coarse and ``N`` fine points. The Galerkin product is counted as
    restriction (25 taps), fine operator (5 taps) and bilinear-like
    prolongation (9 taps); the stencil-composition variant adds the
    recomposition of every coarse stencil.
    """
    v = normalize_variant(variant)
    if v == "StrGlk":
        return 50 * M + 10 * N + 18 * N
    if v == "StclOpGlk":
        return (50 + 1740) * M
    if v == "ReD_O2":
        return 10 * M
    if v in ("ReD_O4", "ReD_cmpO4", "ReD_9ptO2"):
        return 18 * M
    if v == "ReD_O6":
        return 26 * M
    return 50 * M  # ReD_Glk1, ReD_Glk2


# -- Galerkin operators ----------------------------------------------------------

class StrGlkOperator:
    """``y = P^T(A_h(P x))`` with identity rows on Dirichlet coarse boundaries."""

    name = "StrGlk"

    def __init__(self, fine_op, transfer: Transfer):
        if fine_op is None or transfer is None:
            raise MissingFineContext("StrGlk needs the fine operator and the transfer pair")
        self.fine_op = fine_op
        self.transfer = transfer
        self.view = transfer.coarse
        self.dirichlet = transfer.bc.dirichlet
        if self.dirichlet:
            self._bmask = transfer.coarse.boundary_mask()
        self.applications = 0

    def apply(self, x):
        self.applications += 1
        y = self.transfer.restrict_adjoint(self.fine_op.apply(self.transfer.prolong(x)))
        if self.dirichlet:
            y = np.where(self._bmask, x, y)
        return y

    __call__ = apply


class StclOpGlkOperator:
    """Galerkin operator whose coarse stencils are recomposed on every application.

    The fine operator's coefficient arrays and the transfer stencils are
    combined per coarse point into a ``(2r+1) x (2r+1)`` stencil which is
    then applied to ``x``. With ``memoize=True`` the composed stencils are
    kept after the first application.
    """

    name = "StclOpGlk"

    def __init__(self, fine_op: StencilOperator, transfer: Transfer, memoize: bool = False):
        if fine_op is None or transfer is None:
            raise MissingFineContext("StclOpGlk needs the fine operator and the transfer pair")
        self.fine_op = fine_op
        self.transfer = transfer
        self.view = transfer.coarse
        self.memoize = memoize
        self.dirichlet = transfer.bc.dirichlet
        fv, cv = transfer.fine, transfer.coarse
        # restriction weights of P^T
        self.rw = np.array(transfer.pweights)
        self.pw = np.array(transfer.pweights)
        self.rr = len(self.rw) // 2
        self.rp = len(self.pw) // 2
        # coarse stencil radius: (rr + 1 + rp) // 2
        self.radius = (self.rr + 1 + self.rp) // 2
        self.W = self.rr + 1  # fine halo for the coefficients
        self._fcoef = {}
        for s, c in fine_op.coeffs.items():
            cc = c
            if self.dirichlet:
                cc = c * ~fv.boundary_mask()
            self._fcoef[s] = fv.pad(cc, self.W)
        if self.dirichlet:
            self._cin = fv  # placeholder for clarity
            self._cmask_pad = cv.pad((~cv.boundary_mask()).astype(float), self.radius).real
            self._bmask = cv.boundary_mask()
        self._stencils = None
        self.applications = 0

    def compose(self):
        """Per-point coarse stencils ``{d: array}`` on the owned coarse block."""
        fv, cv = self.transfer.fine, self.transfer.coarse
        nci, ncj = cv.shape
        W = self.W
        out = {}
        for t0 in range(-self.rr, self.rr + 1):
            for t1 in range(-self.rr, self.rr + 1):
                wr = self.rw[t0 + self.rr] * self.rw[t1 + self.rr]
                # fine rows 2c + t
                a0 = 2 * cv.i0 - fv.i0 + W + t0
                b0 = 2 * cv.j0 - fv.j0 + W + t1
                for (s0, s1), coef in self._fcoef.items():
                    arow = coef[a0:a0 + 2 * nci - 1:2, b0:b0 + 2 * ncj - 1:2]
                    for d0 in range(-self.radius, self.radius + 1):
                        e0 = t0 + s0 - 2 * d0
                        if abs(e0) > self.rp:
                            continue
                        for d1 in range(-self.radius, self.radius + 1):
                            e1 = t1 + s1 - 2 * d1
                            if abs(e1) > self.rp:
                                continue
                            w = wr * self.pw[e0 + self.rp] * self.pw[e1 + self.rp]
                            acc = out.get((d0, d1))
                            if acc is None:
                                out[(d0, d1)] = w * arow
                            else:
                                acc += w * arow
        if self.dirichlet:
            r = self.radius
            for (d0, d1), arr in out.items():
                arr *= self._cmask_pad[r + d0:r + d0 + nci, r + d1:r + d1 + ncj]
                arr[self._bmask] = 0.0
            out.setdefault((0, 0), np.zeros((nci, ncj), complex))[self._bmask] = 1.0
        return out

    def apply(self, x):
        self.applications += 1
        if self._stencils is not None:
            st = self._stencils
        else:
            st = self.compose()
            if self.memoize:
                self._stencils = st
        r = self.radius
        nci, ncj = self.view.shape
        p = self.view.pad(x, r)
        y = np.zeros((nci, ncj), dtype=complex)
        for (d0, d1), c in st.items():
            y += c * p[r + d0:r + d0 + nci, r + d1:r + d1 + ncj]
        return y

    __call__ = apply


# -- probing -------------------------------------------------------------------

def probe_matrix(apply, view: SubdomainView, radius: int = 3):
    """Assemble a local-stencil operator by applying it to coloured probes.

    Points whose indices agree modulo ``2 radius + 1`` in both directions
    share a probe, so ``(2 radius + 1)^2`` applications recover every entry
    of an operator whose stencils reach at most ``radius`` points. Returns
    the global CSR matrix (unknown ``i * ny + j``) on every worker.
    """
    import scipy.sparse as sp
    m = 2 * radius + 1
    nx, ny = view.grid.shape
    I, J = view.global_indices
    GI, GJ = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    rows, cols, vals = [], [], []
    for a in range(m):
        for b in range(m):
            x = ((I % m == a) & (J % m == b)).astype(complex)
            y = view.gather(apply(x))
            nz = np.nonzero(y)
            if not nz[0].size:
                continue
            ri, rj = nz
            # the coloured source point within ``radius`` of each row
            ci = ri + (a - ri) % m
            ci = np.where(ci - ri > radius, ci - m, ci)
            cj = rj + (b - rj) % m
            cj = np.where(cj - rj > radius, cj - m, cj)
            rows.append(ri * ny + rj)
            cols.append(ci * ny + cj)
            vals.append(y[nz])
    if not rows:
        return sp.csr_matrix((nx * ny, nx * ny), dtype=complex)
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    n = nx * ny
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


# -- factory -------------------------------------------------------------------

def build_coarse_operator(variant: str, coarse_view: SubdomainView, k_coarse, bc,
                          transfer: Transfer | None = None, fine_op=None, scale="auto",
                          shift: complex = 1.0, nine_point=None, memoize: bool = False,
                          glk_boundary_scale: float | None = None):
    """Construct the coarse operator for ``variant``.

    Parameters
    ----------
    variant : str
        One of :data:`VARIANTS`.
    coarse_view : SubdomainView
    k_coarse : ndarray
        Global coarse wavenumber array.
    bc : BoundaryCondition or str
    transfer : Transfer, optional
        The deflation transfer pair; required by the Galerkin variants and
        used to pick the scale of the re-discretised ones.
    fine_op : StencilOperator, optional
        Fine Helmholtz operator, required by the Galerkin variants.
    scale : "auto" or float
        Multiplier of re-discretised operators. ``"auto"`` brings them to the
        level of ``P^T A_h P`` (the second-order rows and the standard schemes
        are multiplied by 4, the Glk interior stays as composed).
    shift : complex
        Multiplier of the ``k^2`` term (a shifted coarse operator for the
        CSLP coarse solve uses ``b1 + i b2``).
    nine_point : tuple, optional
        ``(a0, as, ac, b0, bs, bc)`` for ``ReD_9ptO2``; defaults to the
        eigenvalue-aligned coefficients for ``NINE_POINT_REFERENCE_K``,
        used unchanged for every wavenumber.
    glk_boundary_scale : float, optional
        Extra multiplier of the second-order boundary rows of the Glk
        variants; defaults to 1.
    """
    v = normalize_variant(variant)
    bc = BoundaryCondition.coerce(bc)
    if v == "StrGlk":
        return StrGlkOperator(fine_op, transfer)
    if v == "StclOpGlk":
        return StclOpGlkOperator(fine_op, transfer, memoize=memoize)
    glk_interior = 1.0
    if scale == "auto":
        scale = transfer.adjoint_mass if transfer is not None else 4.0
        glk_interior = 1.0 / scale
    scale = float(scale)
    common = dict(bc=bc, shift=shift, scale=scale, name=v)
    if v == "ReD_O2":
        op = build_stencil_operator(coarse_view, k_coarse, LAPLACE_5PT, Stencil(np.ones((1, 1))),
                                    fallback_layers=1, **common)
    elif v == "ReD_O4":
        op = build_stencil_operator(coarse_view, k_coarse, Stencil(_cross(O4_LAPLACE)),
                                    Stencil(np.ones((1, 1))), fallback_layers=2, **common)
    elif v == "ReD_O6":
        op = build_stencil_operator(coarse_view, k_coarse, Stencil(_cross(O6_LAPLACE)),
                                    Stencil(np.ones((1, 1))), fallback_layers=3, **common)
    elif v == "ReD_cmpO4":
        lap, mass = _nine_point(*singer_turkel_coefficients(1.0))
        op = build_stencil_operator(coarse_view, k_coarse, lap, mass, mass_mode="center",
                                    fallback_layers=0, ghost="so4", corner="average", **common)
    elif v == "ReD_9ptO2":
        if nine_point is None:
            nine_point = optimize_9pt_coefficients(NINE_POINT_REFERENCE_K)
        lap, mass = _nine_point(*nine_point)
        op = build_stencil_operator(coarse_view, k_coarse, lap, mass, mass_mode="center",
                                    fallback_layers=1, **common)
    elif v in ("ReD_Glk1", "ReD_Glk2"):
        lap, mass = _glk_stencils()
        fbs = scale * (1.0 if glk_boundary_scale is None else glk_boundary_scale)
        common["scale"] = scale * glk_interior
        op = build_stencil_operator(coarse_view, k_coarse, lap, mass, mass_mode="tap",
                                    fallback_layers=2 if v == "ReD_Glk1" else 1,
                                    ghost="so2", corner="sequential", ghost_k_zero=True,
                                    fallback_scale=fbs, **common)
    else:  # pragma: no cover
        raise CoarseError(v)
    return op
