"""Wavenumber fields and point-source right-hand sides.

Wavenumbers are returned as real global arrays of shape ``(nx, ny)``; a
worker slices its own window with :meth:`SubdomainView.local`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .grid import Grid2D

__all__ = [
    "MediaError", "NonPositiveK", "UncoveredRegion", "DimensionMismatch", "MalformedFile",
    "NonPositiveVelocity", "LocationOutsideDomain",
    "LayeredVelocityModel", "wedge_model", "constant_k", "layered_k", "load_velocity_grid",
    "read_velocity_file", "write_velocity_file", "point_source_rhs", "max_kh",
]

logger = logging.getLogger(__name__)


class MediaError(ValueError):
    pass


class NonPositiveK(MediaError):
    pass


class UncoveredRegion(MediaError):
    pass


class DimensionMismatch(MediaError):
    pass


class MalformedFile(MediaError):
    pass


class NonPositiveVelocity(MediaError):
    pass


class LocationOutsideDomain(MediaError):
    pass


@dataclass(frozen=True)
class LayeredVelocityModel:
    """Stack of constant-velocity layers separated by straight, possibly sloped lines.

    Parameters
    ----------
    velocities : sequence of float
        Layer velocities from top to bottom.
    interfaces : sequence of (float, float)
        Elevation ``y`` of each interface at ``x = xa`` and ``x = xb``, top to
        bottom; there is one interface fewer than layers.
    xa, xb : float
        Abscissae at which the interface elevations are given.
    top, bottom : float
        Vertical extent covered by the model.
    """

    velocities: tuple
    interfaces: tuple = ()
    xa: float = 0.0
    xb: float = 1.0
    top: float = np.inf
    bottom: float = -np.inf

    def __post_init__(self):
        if len(self.velocities) != len(self.interfaces) + 1:
            raise ValueError("need exactly one interface fewer than layers")
        if any(c <= 0 for c in self.velocities):
            raise NonPositiveVelocity(f"velocities must be positive: {self.velocities}")

    def interface_y(self, m: int, x):
        ya, yb = self.interfaces[m]
        t = (np.asarray(x, dtype=float) - self.xa) / (self.xb - self.xa)
        return ya + t * (yb - ya)

    def velocity(self, x, y, atol: float = 1e-9):
        """Velocity at points ``(x, y)``; points on an interface take the upper layer."""
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        layer = np.zeros(x.shape, dtype=int)
        for m in range(len(self.interfaces)):
            layer += y < self.interface_y(m, x) - atol
        return np.asarray(self.velocities, dtype=float)[layer]


def wedge_model(velocities=(2000.0, 1500.0, 3000.0),
                upper=(-400.0, -200.0), lower=(-600.0, -800.0)) -> LayeredVelocityModel:
    """Three-layer wedge on ``(0, 600) x (-1000, 0)``.

    The interface elevations are configurable defaults: the middle layer
    thickens from left to right.
    """
    return LayeredVelocityModel(tuple(velocities), (tuple(upper), tuple(lower)),
                                xa=0.0, xb=600.0, top=0.0, bottom=-1000.0)


def constant_k(grid: Grid2D, k: float):
    if not k > 0:
        raise NonPositiveK(f"k must be positive, got {k}")
    return np.full(grid.shape, float(k))


def _k_from_velocity(c, f):
    c = np.asarray(c, dtype=float)
    if np.any(~np.isfinite(c)) or np.any(c <= 0):
        raise NonPositiveVelocity("velocity field contains non-positive or non-finite values")
    if not f > 0:
        raise NonPositiveK(f"frequency must be positive, got {f}")
    return 2.0 * np.pi * f / c


def layered_k(grid: Grid2D, model: LayeredVelocityModel, f: float):
    """``k = 2 pi f / c`` evaluated on the grid for a layered velocity model."""
    tol = 1e-9 * max(1.0, abs(grid.y1 - grid.y0))
    if grid.y1 > model.top + tol or grid.y0 < model.bottom - tol:
        raise UncoveredRegion(
            f"model covers y in [{model.bottom}, {model.top}], grid spans [{grid.y0}, {grid.y1}]")
    x, y = grid.coordinates()
    X, Y = np.meshgrid(x, y, indexing="ij")
    return _k_from_velocity(model.velocity(X, Y, atol=1e-9 * grid.h), f)


def read_velocity_file(path):
    """Read an ASCII velocity grid.

    Returns an array of shape ``(nx, ny)`` indexed ``[i, j]`` with ``j = 0`` at
    the bottom; the file lists rows from the top of the domain downwards.
    """
    try:
        with open(path) as fh:
            lines = [ln for ln in (s.strip() for s in fh) if ln]
    except OSError as err:
        raise MalformedFile(f"cannot read {path}: {err}") from err
    try:
        nx, ny = (int(t) for t in lines[0].split())
        rows = [np.array(ln.split(), dtype=float) for ln in lines[1:]]
    except (ValueError, IndexError) as err:
        raise MalformedFile(f"{path}: {err}") from err
    if len(rows) != ny or any(r.size != nx for r in rows):
        raise MalformedFile(f"{path}: expected {ny} rows of {nx} values")
    c = np.array(rows)[::-1].T.copy()
    if np.any(~np.isfinite(c)) or np.any(c <= 0):
        raise NonPositiveVelocity(f"{path}: velocities must be positive")
    return c


def write_velocity_file(path, c):
    """Write a ``(nx, ny)`` velocity array in the ASCII grid format."""
    c = np.asarray(c, dtype=float)
    nx, ny = c.shape
    with open(path, "w") as fh:
        fh.write(f"{nx} {ny}\n")
        for j in range(ny - 1, -1, -1):
            fh.write(" ".join(repr(float(v)) for v in c[:, j]) + "\n")


def load_velocity_grid(path, grid: Grid2D, f: float, resample: bool = False):
    """Wavenumber field from a velocity file.

    With ``resample=True`` a file of different size is bilinearly
    interpolated, assuming it samples the same physical domain.
    """
    c = read_velocity_file(path)
    if c.shape != grid.shape:
        if not resample:
            raise DimensionMismatch(f"file is {c.shape[0]}x{c.shape[1]}, grid is {grid.nx}x{grid.ny}")
        logger.info("resampling %s velocity grid to %s", c.shape, grid.shape)
        s = np.linspace(0.0, 1.0, c.shape[0])
        t = np.linspace(0.0, 1.0, c.shape[1])
        interp = RegularGridInterpolator((s, t), c, method="linear")
        S, T = np.meshgrid(np.linspace(0.0, 1.0, grid.nx), np.linspace(0.0, 1.0, grid.ny),
                           indexing="ij")
        c = interp(np.stack([S.ravel(), T.ravel()], axis=1)).reshape(grid.shape)
    return _k_from_velocity(c, f)


def _nearest_index(v, v0, h, n):
    # ties go to the lower index
    t = (v - v0) / h
    i = int(np.ceil(t - 0.5))
    if abs(t - round(t)) < 1e-9:
        i = int(round(t))
    return min(max(i, 0), n - 1)


def point_source_rhs(grid: Grid2D, location):
    """Discrete delta ``1/h^2`` at the grid point nearest to ``location``."""
    x, y = map(float, location)
    tol = 1e-12 * max(abs(grid.x1 - grid.x0), abs(grid.y1 - grid.y0))
    if not (grid.x0 - tol <= x <= grid.x1 + tol and grid.y0 - tol <= y <= grid.y1 + tol):
        raise LocationOutsideDomain(f"{location} is outside the domain")
    i = _nearest_index(x, grid.x0, grid.h, grid.nx)
    j = _nearest_index(y, grid.y0, grid.h, grid.ny)
    b = np.zeros(grid.shape, dtype=np.complex128)
    b[i, j] = 1.0 / grid.h ** 2
    return b


def max_kh(k, h: float) -> float:
    return float(np.max(k) * h)
