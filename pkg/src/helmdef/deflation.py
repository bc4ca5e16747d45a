"""Two-level deflation preconditioners for the Helmholtz operator.

With prolongation ``P`` (the deflation vectors), restriction ``R = P^T``
and a coarse operator ``A_2h`` the coarse correction is
``Q = P A_2h^{-1} R`` and the deflation
projector is ``P_h = I - A Q``. Three preconditioners are built on top:

``ADEF1``
    ``w = M^{-1}(v - A Q v) + Q v`` with full-weighting/bilinear transfers,
    ``M^{-1}`` being one CSLP V-cycle.
``APD``
    The same formula with the high-order transfer pair.
``TLKM``
    Deflation of the CSLP-preconditioned operator:
    ``y = M^{-1} v``, ``w = y - M^{-1} A Q~ y + gamma Q~ y`` where
    ``Q~ = P T^{-1} R`` and the coarse system ``T = R P M_2h^{-1} A_2h`` is
    solved with plain GMRES.

Coarse systems are solved iteratively from a zero initial guess.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coarse import build_coarse_operator, normalize_variant, probe_matrix, variant_halo
from .grid import SubdomainView
from .krylov import CoarseSolver, ConvergenceReport, gcr, fgmres, gmres
from .multigrid import build_hierarchy, coarsen_k
from .operators import BoundaryCondition, helmholtz_operator
from .transfer import Transfer

__all__ = ["DEFLATION_VARIANTS", "DeflationConfig", "DenseCoarseSolver", "DirectCoarseSolver",
           "TwoLevelPreconditioner",
           "normalize_deflation", "solve"]

logger = logging.getLogger(__name__)

DEFLATION_VARIANTS = ("ADEF1", "APD", "TLKM", "NONE")


class DirectCoarseSolver:
    """Sparse LU solve of a coarse operator assembled by probing.

    Stands in for a Krylov coarse solve driven to round-off; the counters
    mirror :class:`~helmdef.krylov.CoarseSolver` and record zero iterations.
    """

    def __init__(self, apply_A, view: SubdomainView, radius: int = 3):
        from scipy.sparse.linalg import splu
        self.view = view
        self.matrix = probe_matrix(apply_A, view, radius).tocsc()
        self.lu = splu(self.matrix)
        self.counts = []
        self.residuals = []
        self.saturated = 0

    def reset(self):
        self.counts = []
        self.residuals = []

    def solve(self, rhs):
        v = self.view
        g = v.gather(rhs).ravel()
        x = self.lu.solve(g).reshape(v.grid.shape)
        self.counts.append(0)
        self.residuals.append(0.0)
        return np.ascontiguousarray(v.local(x))

    __call__ = solve


class DenseCoarseSolver(DirectCoarseSolver):
    """Dense LU solve of a non-local coarse operator built column by column.

    Used for TLKM, whose coarse operator contains a V-cycle. The coarse
    CSLP hierarchy must be an exactly linear map while the columns are
    formed, so its coarsest solves are not frozen during assembly.
    """

    def __init__(self, apply_A, view: SubdomainView, hierarchy=None, max_unknowns: int = 20000):
        from scipy.linalg import lu_factor
        self.view = view
        shape = view.grid.shape
        n = shape[0] * shape[1]
        if n > max_unknowns:
            raise ValueError(f"dense coarse solve refused for {n} unknowns")
        freeze = None
        if hierarchy is not None:
            freeze, hierarchy.freeze = hierarchy.freeze, False
        try:
            mat = np.empty((n, n), dtype=complex, order="F")
            e = view.zeros()
            i0, i1, j0, j1 = view.i0, view.i1, view.j0, view.j1
            for idx in range(n):
                i, j = divmod(idx, shape[1])
                owned = i0 <= i < i1 and j0 <= j < j1
                if owned:
                    e[i - i0, j - j0] = 1.0
                mat[:, idx] = view.gather(apply_A(e)).ravel()
                if owned:
                    e[i - i0, j - j0] = 0.0
        finally:
            if hierarchy is not None:
                hierarchy.freeze = freeze
                hierarchy.reset()
        # Dirichlet boundary rows vanish because R drops them; the matching
        # right-hand sides are zero too, so an identity row keeps them inert
        empty = ~np.any(mat, axis=1)
        mat[empty, empty] = 1.0
        self.matrix = mat
        self.lu = _DenseLU(lu_factor(mat, check_finite=False))
        self.counts = []
        self.residuals = []
        self.saturated = 0


class _DenseLU:
    def __init__(self, factors):
        self.factors = factors

    def solve(self, b):
        from scipy.linalg import lu_solve
        return lu_solve(self.factors, b, check_finite=False)


def normalize_deflation(name) -> str:
    key = str(name).replace("-", "").replace("_", "").upper()
    if key in ("ADEF1", "APD", "TLKM"):
        return key
    if key in ("NONE", "CSLP", ""):
        return "NONE"
    raise ValueError(f"unknown deflation variant {name!r}")


@dataclass
class DeflationConfig:
    """Settings of a two-level preconditioner.

    ``transfer=None`` picks the pair bound to the variant (linear for ADEF1
    and TLKM, high order for APD). ``coarse_mode`` is ``"cslp"`` for GMRES
    with one coarse CSLP V-cycle per iteration, ``"plain"`` for GMRES
    without preconditioner, or ``"direct"`` for an LU factorisation of the
    coarse operator (sparse for ADEF1 and APD, dense for TLKM; a stand-in
    for coarse solves at very tight tolerances).
    """

    variant: str = "APD"
    coarse_op: str = "StrGlk"
    gamma: float = 1.0
    gamma_sign: float = 1.0
    coarse_tol: float = 1e-6
    coarse_maxit: int = 1000
    coarse_mode: str | None = None
    shift: tuple = (1.0, -0.5)
    transfer: str | None = None
    scale: object = 1.0
    omega: float = 0.8
    mg_coarsest_tol: float = 1e-8
    mg_coarsest_maxit: int = 500
    mg_min_block: int = 2
    mg_coarsest_points: int = 3
    mg_freeze: bool = True
    stcl_memoize: bool = False
    glk_boundary_scale: float | None = None
    nine_point: tuple | None = None

    def __post_init__(self):
        self.variant = normalize_deflation(self.variant)
        self.coarse_op = normalize_variant(self.coarse_op)
        if not np.isfinite(self.gamma):
            raise ValueError("gamma must be finite")
        if not 0 < self.coarse_tol < 1:
            raise ValueError("coarse tolerance must lie in (0, 1)")
        if self.transfer is None:
            self.transfer = "high" if self.variant == "APD" else "linear"
        if self.coarse_mode is None:
            self.coarse_mode = "plain" if self.variant == "TLKM" else "cslp"
        if self.coarse_mode not in ("cslp", "plain", "direct"):
            raise ValueError(f"unknown coarse mode {self.coarse_mode!r}")


class TwoLevelPreconditioner:
    """Set up the fine operator, CSLP hierarchy, transfers and coarse solver.

    Parameters
    ----------
    view : SubdomainView
        Fine-grid view of this worker.
    k : ndarray
        Global fine wavenumber array.
    bc : BoundaryCondition or str
    cfg : DeflationConfig
    """

    def __init__(self, view: SubdomainView, k, bc, cfg: DeflationConfig):
        self.view = view
        self.cfg = cfg
        self.bc = BoundaryCondition.coerce(bc)
        self.k = np.asarray(k, dtype=float)
        self.A = helmholtz_operator(view, self.k, self.bc)
        self.mg = build_hierarchy(view, self.k, cfg.shift, self.bc, min_block=cfg.mg_min_block,
                                  coarsest_points=cfg.mg_coarsest_points, omega=cfg.omega,
                                  coarsest_tol=cfg.mg_coarsest_tol,
                                  coarsest_maxit=cfg.mg_coarsest_maxit, freeze=cfg.mg_freeze)
        self.fine_vcycles = 0
        if cfg.variant == "NONE":
            self.coarse = None
            return
        self.cview = view.coarsen()
        self.kc = coarsen_k(self.k)
        self.T = Transfer(view, self.cview, cfg.transfer, self.bc)
        self.A2h = build_coarse_operator(cfg.coarse_op, self.cview, self.kc, self.bc, self.T,
                                         fine_op=self.A, scale=cfg.scale,
                                         memoize=cfg.stcl_memoize,
                                         glk_boundary_scale=cfg.glk_boundary_scale,
                                         nine_point=cfg.nine_point)
        # coarse CSLP hierarchy (used by CSLP-GMRES coarse solves and by TLKM)
        self.mg2h = None
        if cfg.coarse_mode == "cslp" or cfg.variant == "TLKM":
            self.mg2h = build_hierarchy(self.cview, self.kc, cfg.shift, self.bc,
                                        min_block=cfg.mg_min_block,
                                        coarsest_points=cfg.mg_coarsest_points, omega=cfg.omega,
                                        coarsest_tol=cfg.mg_coarsest_tol,
                                        coarsest_maxit=cfg.mg_coarsest_maxit,
                                        freeze=cfg.mg_freeze)
        if cfg.variant == "TLKM":
            A2h, mg2h, T = self.A2h, self.mg2h, self.T

            def tlkm_coarse(x):
                return T.restrict_adjoint(T.prolong(mg2h(A2h.apply(x))))
            op = tlkm_coarse
            pre = None
        else:
            op = self.A2h.apply
            pre = self.mg2h if cfg.coarse_mode == "cslp" else None
        if cfg.coarse_mode == "direct" and cfg.variant == "TLKM":
            self.coarse = DenseCoarseSolver(op, self.cview, self.mg2h)
        elif cfg.coarse_mode == "direct":
            self.coarse = DirectCoarseSolver(op, self.cview, max(variant_halo(cfg.coarse_op), 2))
        else:
            self.coarse = CoarseSolver(op, self.cview, pre, cfg.coarse_tol, cfg.coarse_maxit)

    # -- building blocks ----------------------------------------------------
    def reset(self):
        """Forget per-solve state (frozen coarsest counts, statistics)."""
        self.mg.reset()
        if self.mg2h is not None:
            self.mg2h.reset()
        if self.coarse is not None:
            self.coarse.reset()
        self.fine_vcycles = 0

    def vcycle(self, v):
        self.fine_vcycles += 1
        return self.mg(v)

    def apply_Q(self, v):
        """``Q v = P A_2h^{-1} R v`` (coarse operator of the configured variant)."""
        return self.T.prolong(self.coarse(self.T.restrict_adjoint(v)))

    def apply_P_shifted(self, v, gamma=None):
        """``v - A Q v + gamma Q v``."""
        gamma = self.cfg.gamma if gamma is None else gamma
        q = self.apply_Q(v)
        return v - self.A.apply(q) + self.cfg.gamma_sign * gamma * q

    def apply_adef1(self, v):
        q = self.apply_Q(v)
        return self.vcycle(v - self.A.apply(q)) + q

    def apply_tlkm(self, v):
        y = self.vcycle(v)
        q = self.apply_Q(y)
        return y - self.vcycle(self.A.apply(q)) + self.cfg.gamma_sign * self.cfg.gamma * q

    def __call__(self, v):
        variant = self.cfg.variant
        if variant == "NONE":
            return self.vcycle(v)
        if variant == "TLKM":
            return self.apply_tlkm(v)
        return self.apply_adef1(v)

    def solution_correction(self, u_hat, b):
        """``Q b + (I - Q A) u_hat`` for solves with the plain projector."""
        return self.apply_Q(b) + u_hat - self.apply_Q(self.A.apply(u_hat))

    def coarse_counts(self):
        return list(self.coarse.counts) if self.coarse is not None else []


def solve(pre: TwoLevelPreconditioner, b, outer="gmres", tol=1e-6, maxit=500, on_iter=None):
    """Solve ``A u = b`` with the two-level preconditioner.

    ``outer`` is ``"gmres"`` (left preconditioning), ``"gcr"`` or
    ``"fgmres"`` (right preconditioning).

    Returns
    -------
    u : ndarray
    report : ConvergenceReport
    """
    pre.reset()
    A = pre.A.apply
    if outer == "gmres":
        u, rep = gmres(A, b, pre, tol, maxit, view=pre.view, on_iter=on_iter)
    elif outer == "gcr":
        u, rep = gcr(A, b, pre, tol, maxit, view=pre.view, on_iter=on_iter)
    elif outer == "fgmres":
        u, rep = fgmres(A, b, pre, tol, maxit, view=pre.view, on_iter=on_iter)
    else:
        raise ValueError(f"unknown outer solver {outer!r}")
    rep.coarse_iterations = pre.coarse_counts()
    return u, rep
