"""Krylov solvers on distributed fields.

Vectors are arrays of a worker's owned block; inner products go through a
:class:`~helmdef.grid.SubdomainView` so that they are global and
reproducible. All solvers start from a zero initial guess unless ``x0`` is
given.

* :func:`gmres` -- left-preconditioned full GMRES (modified Gram-Schmidt,
  Givens rotations), stopping on the preconditioned relative residual.
* :func:`gcr` -- right-preconditioned GCR, stopping on the true relative
  residual; tolerates a preconditioner that changes between iterations.
* :func:`fgmres` -- flexible GMRES with right preconditioning.
* :class:`CoarseSolver` -- GMRES for a coarse-grid system, plain or with a
  CSLP V-cycle as right preconditioner.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import SubdomainView

__all__ = [
    "ConvergenceReport", "MaxIterationsWarning", "StagnationWarning",
    "gmres", "gcr", "fgmres", "CoarseSolver",
]

logger = logging.getLogger(__name__)

REORTH_THRESHOLD = 1e-8


class MaxIterationsWarning(RuntimeWarning):
    pass


class StagnationWarning(RuntimeWarning):
    pass


@dataclass
class ConvergenceReport:
    """Outcome of one Krylov solve."""

    iterations: int = 0
    converged: bool = False
    history: list = field(default_factory=list)
    relres_precond: float = float("nan")
    relres_true: float = float("nan")
    wall_time: float = 0.0
    coarse_iterations: list = field(default_factory=list)
    flops: float = 0.0
    breakdown: bool = False

    @property
    def avg_coarse_iterations(self) -> float:
        c = self.coarse_iterations
        return float(np.mean(c)) if c else 0.0

    @property
    def max_coarse_iterations(self) -> int:
        return int(max(self.coarse_iterations)) if self.coarse_iterations else 0

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "history": [float(h) for h in self.history],
            "relres_precond": float(self.relres_precond),
            "relres_true": float(self.relres_true),
            "wall_time": self.wall_time,
            "coarse_iterations": [int(c) for c in self.coarse_iterations],
            "avg_coarse_iterations": self.avg_coarse_iterations,
            "max_coarse_iterations": self.max_coarse_iterations,
            "flops": self.flops,
        }


class _Space:
    """Global inner products for flat or blocked vectors."""

    def __init__(self, view: SubdomainView | None):
        self.view = view
        self.serial = view is None or view.comm.size == 1

    def dot(self, u, v) -> complex:
        d = np.vdot(u, v)
        return complex(d) if self.serial else complex(self.view.comm.allsum(d))

    def norm(self, u) -> float:
        return float(np.sqrt(max(self.dot(u, u).real, 0.0)))

    def block_dot(self, V, w):
        """``V^H w`` for the rows of ``V``, reduced globally in one step."""
        h = (V @ w.conj()).conj()
        return h if self.serial else self.view.comm.allsum(h)


class _Basis:
    """Growable row-stacked basis of flat vectors."""

    def __init__(self, n, dtype=complex, cap=32):
        self.data = np.empty((cap, n), dtype=dtype)
        self.size = 0

    def append(self, v):
        if self.size == self.data.shape[0]:
            new = np.empty((2 * self.data.shape[0], self.data.shape[1]), dtype=self.data.dtype)
            new[:self.size] = self.data[:self.size]
            self.data = new
        self.data[self.size] = v
        self.size += 1

    def __getitem__(self, i):
        return self.data[i]

    @property
    def rows(self):
        return self.data[:self.size]


def _givens(a, b):
    if b == 0:
        return 1.0, 0.0
    if a == 0:
        return 0.0, 1.0
    t = np.hypot(abs(a), abs(b))
    c = abs(a) / t
    s = (a / abs(a)) * np.conj(b) / t
    return c, s


def _orthogonalize(V, w, space, method):
    """Orthogonalise ``w`` against the basis; returns ``(w, h)``."""
    j = V.size
    if method == "cgs2":
        h = space.block_dot(V.rows, w)
        w = w - V.rows.T @ h
        h2 = space.block_dot(V.rows, w)
        w = w - V.rows.T @ h2
        return w, h + h2
    h = np.zeros(j, dtype=complex)
    for i in range(j):
        hij = space.dot(V[i], w)
        h[i] = hij
        w = w - hij * V[i]
    hn = space.norm(w)
    # one reorthogonalisation pass when orthogonality to the first vector is lost
    if hn > 0 and abs(space.dot(V[0], w)) / hn > REORTH_THRESHOLD:
        for i in range(j):
            corr = space.dot(V[i], w)
            h[i] += corr
            w = w - corr * V[i]
    return w, h


def _arnoldi_gmres(op, r0, space, tol, maxit, ref_norm, on_iter=None, right=None,
                   orth="mgs"):
    """Core GMRES loop on ``op`` starting from residual ``r0``.

    Vectors are handled flat; ``op`` and ``right`` receive and return
    arrays of ``r0``'s shape. With ``right`` given (flexible variant) the
    preconditioned directions are stored and returned for the update.
    Returns ``(y, V, Z, history, j, breakdown)``.
    """
    beta = space.norm(r0)
    history = [beta / ref_norm if ref_norm > 0 else 0.0]
    if beta == 0 or history[0] <= tol:
        return None, None, None, history, 0, False
    shape = r0.shape
    n = r0.size
    V = _Basis(n)
    V.append(r0.ravel() / beta)
    Z = _Basis(n) if right is not None else None
    cap = min(maxit, 64)
    Hm = np.zeros((cap + 1, cap), dtype=complex)
    cs = np.zeros(cap)
    sn = np.zeros(cap, dtype=complex)
    g = np.zeros(cap + 1, dtype=complex)
    g[0] = beta
    j = 0
    breakdown = False
    while j < maxit:
        if j == cap:
            cap = min(2 * cap, maxit)
            Hm = np.pad(Hm, ((0, cap + 1 - Hm.shape[0]), (0, cap - Hm.shape[1])))
            cs = np.pad(cs, (0, cap - cs.size))
            sn = np.pad(sn, (0, cap - sn.size))
            g = np.pad(g, (0, cap + 1 - g.size))
        vj = V[j].reshape(shape)
        if right is not None:
            z = right(vj)
            Z.append(z.ravel())
            w = op(z)
        else:
            w = op(vj)
        w = np.asarray(w, dtype=complex).ravel()
        wnorm0 = space.norm(w)
        w, h = _orthogonalize(V, w, space, orth)
        Hm[:j + 1, j] = h
        hnext = space.norm(w)
        Hm[j + 1, j] = hnext
        for i in range(j):
            a, b = Hm[i, j], Hm[i + 1, j]
            Hm[i, j] = cs[i] * a + sn[i] * b
            Hm[i + 1, j] = -np.conj(sn[i]) * a + cs[i] * b
        c, s = _givens(Hm[j, j], Hm[j + 1, j])
        cs[j], sn[j] = c, s
        Hm[j, j] = c * Hm[j, j] + s * Hm[j + 1, j]
        Hm[j + 1, j] = 0.0
        g[j + 1] = -np.conj(s) * g[j]
        g[j] = c * g[j]
        j += 1
        res = abs(g[j]) / ref_norm
        history.append(res)
        if on_iter is not None:
            on_iter(j, res)
        if hnext <= 1e-14 * max(wnorm0, 1e-300):
            breakdown = True
            break
        if res <= tol:
            break
        V.append(w / hnext)
    y = _upper_solve(Hm[:j, :j], g[:j]) if j > 0 else None
    return y, V, Z, history, j, breakdown


def _upper_solve(Rm, g):
    from scipy.linalg import solve_triangular
    return solve_triangular(Rm, g, lower=False)


def _combine(B, y, shape):
    return (B.rows[:len(y)].T @ y).reshape(shape)


def _as_space(view):
    return _Space(view if isinstance(view, SubdomainView) else None)


def gmres(apply_A, b, apply_P=None, tol=1e-6, maxit=1000, x0=None, view=None, restart=None,
          on_iter=None, compute_true=True, orth="mgs"):
    """Left-preconditioned GMRES for ``P A x = P b``.

    Parameters
    ----------
    apply_A, apply_P : callable
        Operator and (fixed, linear) preconditioner; ``apply_P=None`` means
        no preconditioning.
    b : ndarray
    tol : float
        Stop when ``||P(b - A x)|| / ||P b|| <= tol``.
    maxit : int
        Maximum total number of iterations.
    view : SubdomainView, optional
        Needed for global inner products under domain decomposition.
    restart : int, optional
        Restart length; full GMRES when None.

    Returns
    -------
    x : ndarray
    report : ConvergenceReport
    """
    t0 = time.perf_counter()
    P = apply_P if apply_P is not None else (lambda v: v)
    space = _as_space(view)
    x = np.zeros_like(b, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    Pb = P(b)
    ref = space.norm(Pb)
    report = ConvergenceReport()
    if ref == 0:
        report.history = [0.0]
        report.relres_precond = report.relres_true = 0.0
        report.converged = True
        report.wall_time = time.perf_counter() - t0
        return x, report
    r = Pb if x0 is None else P(b - apply_A(x))
    op = lambda v: P(apply_A(v))
    history = []
    total = 0
    breakdown = False
    while True:
        m = maxit - total if restart is None else min(restart, maxit - total)
        y, V, _, hist, j, breakdown = _arnoldi_gmres(op, r, space, tol, m, ref, on_iter,
                                                     orth=orth)
        history.extend(hist if not history else hist[1:])
        if y is not None:
            x = x + _combine(V, y, x.shape)
        total += j
        if history[-1] <= tol or breakdown or total >= maxit or j == 0:
            break
        r = P(b - apply_A(x))
    report.iterations = total
    report.history = history
    report.breakdown = breakdown
    if compute_true:
        rt = b - apply_A(x)
        report.relres_true = space.norm(rt) / space.norm(b)
        report.relres_precond = space.norm(P(rt)) / ref
    else:
        report.relres_precond = history[-1]
    report.converged = history[-1] <= tol or report.relres_precond <= tol
    if not report.converged:
        warnings.warn(f"GMRES stopped after {total} iterations at relative residual "
                      f"{history[-1]:.3e}", MaxIterationsWarning, stacklevel=2)
    report.wall_time = time.perf_counter() - t0
    return x, report


def fgmres(apply_A, b, apply_P=None, tol=1e-6, maxit=1000, view=None, on_iter=None,
           orth="mgs"):
    """Flexible GMRES (right preconditioning, true-residual stopping)."""
    t0 = time.perf_counter()
    P = apply_P if apply_P is not None else (lambda v: v)
    space = _as_space(view)
    x = np.zeros_like(b, dtype=complex)
    ref = space.norm(b)
    report = ConvergenceReport()
    if ref == 0:
        report.history = [0.0]
        report.relres_precond = report.relres_true = 0.0
        report.converged = True
        return x, report
    y, V, Z, hist, j, breakdown = _arnoldi_gmres(apply_A, b.astype(complex), space, tol, maxit,
                                                 ref, on_iter, right=P, orth=orth)
    if y is not None:
        x = x + _combine(Z, y, x.shape)
    report.iterations = j
    report.history = hist
    report.relres_true = space.norm(b - apply_A(x)) / ref
    report.relres_precond = report.relres_true
    report.converged = report.relres_true <= tol * (1 + 1e-8) or hist[-1] <= tol
    report.breakdown = breakdown
    report.wall_time = time.perf_counter() - t0
    return x, report


def gcr(apply_A, b, apply_P=None, tol=1e-6, maxit=1000, view=None, truncation=None,
        on_iter=None):
    """Right-preconditioned generalized conjugate residual method.

    The preconditioner may vary from one iteration to the next. Iterates
    stop when the true relative residual ``||b - A x|| / ||b||`` falls to
    ``tol``. With ``truncation=m`` only the last ``m`` direction pairs are
    kept for orthogonalisation.
    """
    t0 = time.perf_counter()
    P = apply_P if apply_P is not None else (lambda v: v)
    space = _as_space(view)
    x = np.zeros_like(b, dtype=complex)
    r = np.array(b, dtype=complex)
    ref = space.norm(b)
    report = ConvergenceReport()
    if ref == 0:
        report.history = [0.0]
        report.relres_precond = report.relres_true = 0.0
        report.converged = True
        return x, report
    history = [1.0]
    S, AS = [], []
    it = 0
    stall = 0
    while it < maxit and history[-1] > tol:
        s = P(r)
        As = apply_A(s)
        for sk, Ask in zip(S, AS):
            a = space.dot(Ask, As)
            As = As - a * Ask
            s = s - a * sk
        nrm = space.norm(As)
        if nrm == 0:
            report.breakdown = True
            break
        As = As / nrm
        s = s / nrm
        alpha = space.dot(As, r)
        x = x + alpha * s
        r = r - alpha * As
        S.append(s)
        AS.append(As)
        if truncation is not None and len(S) > truncation:
            S.pop(0)
            AS.pop(0)
        it += 1
        res = space.norm(r) / ref
        if history[-1] - res <= 1e-12 * history[-1]:
            stall += 1
            if stall >= 5:
                warnings.warn("GCR residual stagnated over 5 iterations", StagnationWarning,
                              stacklevel=2)
                stall = 0
        else:
            stall = 0
        history.append(res)
        if on_iter is not None:
            on_iter(it, res)
    report.iterations = it
    report.history = history
    report.relres_true = space.norm(b - apply_A(x)) / ref
    report.relres_precond = history[-1]
    report.converged = history[-1] <= tol
    if not report.converged:
        warnings.warn(f"GCR stopped after {it} iterations at relative residual "
                      f"{history[-1]:.3e}", MaxIterationsWarning, stacklevel=2)
    report.wall_time = time.perf_counter() - t0
    return x, report


class CoarseSolver:
    """GMRES for a coarse-grid system, with bookkeeping of iteration counts.

    Parameters
    ----------
    apply_A : callable
        Coarse operator.
    view : SubdomainView
        Coarse-grid view.
    precond : callable, optional
        Right preconditioner applied once per iteration (for instance one
        V-cycle of the coarse-level CSLP).
    tol, maxit : float, int
        Relative residual target and iteration cap.
    orth : {"cgs2", "mgs"}
        Orthogonalisation; block classical Gram-Schmidt with a second pass
        needs two global reductions per iteration instead of one per basis
        vector.
    """

    def __init__(self, apply_A, view, precond=None, tol=1e-6, maxit=1000, name="coarse",
                 orth="cgs2"):
        self.apply_A = apply_A
        self.orth = orth
        self.view = view
        self.precond = precond
        self.tol = tol
        self.maxit = maxit
        self.name = name
        self.counts = []
        self.residuals = []
        self.saturated = 0

    def reset(self):
        self.counts = []
        self.residuals = []
        self.saturated = 0

    def solve(self, rhs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxIterationsWarning)
            if self.precond is None:
                x, rep = gmres(self.apply_A, rhs, None, self.tol, self.maxit, view=self.view,
                               compute_true=False, orth=self.orth)
            else:
                x, rep = fgmres(self.apply_A, rhs, self.precond, self.tol, self.maxit,
                                view=self.view, orth=self.orth)
        self.counts.append(rep.iterations)
        self.residuals.append(rep.history[-1])
        if not rep.converged and rep.history[-1] > self.tol:
            self.saturated += 1
            logger.debug("%s solve hit %d iterations at %.3e", self.name, rep.iterations,
                         rep.history[-1])
        return x

    __call__ = solve
