"""Matrix-free two-level deflation solvers for the 2D Helmholtz equation.

The package is organised bottom-up:

``grid``        structured grids, block partitions, halo exchange
``media``       wavenumber fields and point sources
``operators``   matrix-free Helmholtz and shifted-Laplacian operators
``transfer``    restriction and prolongation pairs
``multigrid``   V-cycle approximation of the shifted-Laplacian inverse
``coarse``      Galerkin and re-discretised coarse operators
``deflation``   ADEF1, APD and TLKM preconditioners
``krylov``      GMRES, flexible GMRES and GCR
``experiments`` model problems, reports and scaling runs
"""
from .coarse import build_coarse_operator, derive_red_glk_stencils, optimize_9pt_coefficients
from .deflation import DeflationConfig, TwoLevelPreconditioner, solve
from .grid import Grid2D, SubdomainView, build_grid, partition
from .krylov import ConvergenceReport, fgmres, gcr, gmres
from .operators import apply_cslp, apply_helmholtz, assemble_matrix

__version__ = "0.1.0"

__all__ = [
    "ConvergenceReport", "DeflationConfig", "Grid2D", "SubdomainView", "TwoLevelPreconditioner",
    "apply_cslp", "apply_helmholtz", "assemble_matrix", "build_coarse_operator", "build_grid",
    "derive_red_glk_stencils", "fgmres", "gcr", "gmres", "optimize_9pt_coefficients",
    "partition", "solve",
]
