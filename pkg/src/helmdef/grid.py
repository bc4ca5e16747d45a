"""Structured grids, blockwise Cartesian partitions and halo exchange.

Grid values are stored as 2D arrays indexed ``[i, j]`` with ``i`` running
along x and ``j`` along y. Global indices are 0-based internally; the
coarse/fine correspondence helper :func:`coarse_to_fine` uses the 1-based
convention ``(ic, jc) -> (2 ic - 1, 2 jc - 1)``.

A worker only ever holds its *owned* block. Operators that need neighbour
values ask a :class:`SubdomainView` for a padded copy of the block whose halo
has been filled from the neighbouring workers (:meth:`SubdomainView.pad`).
Cells of the halo that fall outside the physical domain are left at zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "GridError", "AnisotropicSpacing", "DegenerateDomain", "NotCoarsenable",
    "TooManyWorkers", "InfeasiblePartition",
    "Grid2D", "build_grid", "coarsen_grid", "coarse_to_fine",
    "CartesianPartition", "partition",
    "SerialComm", "MPIComm", "get_comm",
    "SubdomainView", "halo_exchange",
]


class GridError(ValueError):
    pass


class AnisotropicSpacing(GridError):
    pass


class DegenerateDomain(GridError):
    pass


class NotCoarsenable(GridError):
    pass


class TooManyWorkers(GridError):
    pass


class InfeasiblePartition(GridError):
    pass


@dataclass(frozen=True)
class Grid2D:
    """Vertex-centred uniform grid on ``[x0, x1] x [y0, y1]``."""

    nx: int
    ny: int
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def h(self) -> float:
        return (self.x1 - self.x0) / (self.nx - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def coarsenable(self) -> bool:
        return self.nx % 2 == 1 and self.ny % 2 == 1 and self.nx >= 5 and self.ny >= 5

    def coordinates(self):
        """Return the 1D coordinate vectors ``(x, y)``."""
        x = self.x0 + self.h * np.arange(self.nx)
        y = self.y0 + self.h * np.arange(self.ny)
        return x, y

    def __str__(self):
        return f"{self.nx}x{self.ny} (h={self.h:.6g})"


def build_grid(nx: int, ny: int, extents=(0.0, 0.0, 1.0, 1.0), rtol: float = 1e-10) -> Grid2D:
    """Build a grid with ``nx x ny`` points on ``extents = (x0, y0, x1, y1)``.

    Raises :class:`AnisotropicSpacing` when the x and y mesh widths differ.
    """
    x0, y0, x1, y1 = map(float, extents)
    if nx < 3 or ny < 3:
        raise DegenerateDomain(f"need at least 3 points per direction, got {nx}x{ny}")
    if not (x1 > x0 and y1 > y0):
        raise DegenerateDomain(f"degenerate extents {extents}")
    hx = (x1 - x0) / (nx - 1)
    hy = (y1 - y0) / (ny - 1)
    if abs(hx - hy) > rtol * max(hx, hy):
        raise AnisotropicSpacing(f"hx={hx!r} differs from hy={hy!r}")
    return Grid2D(int(nx), int(ny), x0, y0, x1, y1)


def coarsen_grid(grid: Grid2D) -> Grid2D:
    """Standard coarsening ``h -> 2h``; both point counts must be odd."""
    if grid.nx % 2 == 0 or grid.ny % 2 == 0:
        raise NotCoarsenable(f"grid {grid.nx}x{grid.ny} has an even point count")
    return Grid2D((grid.nx + 1) // 2, (grid.ny + 1) // 2, grid.x0, grid.y0, grid.x1, grid.y1)


def coarse_to_fine(ic: int, jc: int) -> tuple[int, int]:
    """Fine-grid index coinciding with coarse point ``(ic, jc)`` (1-based)."""
    return 2 * ic - 1, 2 * jc - 1


def _split(n: int, p: int) -> tuple[tuple[int, int], ...]:
    # larger blocks first
    base, extra = divmod(n, p)
    ranges = []
    lo = 0
    for r in range(p):
        size = base + (1 if r < extra else 0)
        ranges.append((lo, lo + size))
        lo += size
    return tuple(ranges)


@dataclass(frozen=True)
class CartesianPartition:
    """Owned half-open index ranges of a ``px x py`` worker grid.

    Worker ids are row-major over ``(px, py)``: ``worker = cx * py + cy``.
    """

    px: int
    py: int
    xranges: tuple[tuple[int, int], ...]
    yranges: tuple[tuple[int, int], ...]

    @property
    def nworkers(self) -> int:
        return self.px * self.py

    @property
    def nx(self) -> int:
        return self.xranges[-1][1]

    @property
    def ny(self) -> int:
        return self.yranges[-1][1]

    def coords(self, worker: int) -> tuple[int, int]:
        return divmod(worker, self.py)

    def worker(self, cx: int, cy: int) -> int:
        return cx * self.py + cy

    def owned(self, worker: int) -> tuple[int, int, int, int]:
        cx, cy = self.coords(worker)
        return self.xranges[cx] + self.yranges[cy]

    def owner(self, i: int, j: int) -> int:
        cx = next(r for r, (lo, hi) in enumerate(self.xranges) if lo <= i < hi)
        cy = next(r for r, (lo, hi) in enumerate(self.yranges) if lo <= j < hi)
        return self.worker(cx, cy)

    def min_block(self) -> tuple[int, int]:
        return (min(hi - lo for lo, hi in self.xranges),
                min(hi - lo for lo, hi in self.yranges))

    def coarsen(self) -> CartesianPartition:
        """Partition of the standard-coarsened grid induced by this one.

        Coarse point ``ic`` belongs to whoever owns its coincident fine point
        ``2 ic``; blocks that end up empty are allowed here and rejected by
        the callers that need them non-empty.
        """
        def half(ranges):
            return tuple(((lo + 1) // 2, (hi + 1) // 2) for lo, hi in ranges)
        return CartesianPartition(self.px, self.py, half(self.xranges), half(self.yranges))


def partition(grid: Grid2D, px: int, py: int) -> CartesianPartition:
    """Balanced blockwise split; block sizes along an axis differ by at most one."""
    if px < 1 or py < 1:
        raise InfeasiblePartition(f"worker counts must be positive, got {px}x{py}")
    if px > grid.nx or py > grid.ny:
        raise TooManyWorkers(f"{px}x{py} workers for a {grid.nx}x{grid.ny} grid")
    return CartesianPartition(px, py, _split(grid.nx, px), _split(grid.ny, py))


class SerialComm:
    """Single-worker stand-in for an MPI communicator."""

    rank = 0
    size = 1

    def allsum(self, values):
        return np.asarray(values)

    def sendrecv(self, sendbuf, dest, source, tag=0):
        return None

    def allgather(self, obj):
        return [obj]

    def bcast(self, obj, root=0):
        return obj

    def barrier(self):
        pass


class MPIComm:
    """Thin wrapper over an ``mpi4py`` communicator.

    Sums are formed by gathering every worker's partial values and adding
    them in worker order, so reductions are bitwise reproducible for a fixed
    partition.
    """

    def __init__(self, comm=None):
        from mpi4py import MPI
        self.MPI = MPI
        self.comm = comm if comm is not None else MPI.COMM_WORLD
        self.rank = self.comm.Get_rank()
        self.size = self.comm.Get_size()

    def allsum(self, values):
        values = np.ascontiguousarray(values, dtype=np.complex128)
        recv = np.empty((self.size,) + values.shape, dtype=np.complex128)
        self.comm.Allgather(values, recv)
        out = recv[0].copy()
        for r in range(1, self.size):
            out += recv[r]
        return out

    def sendrecv(self, sendbuf, dest, source, tag=0):
        MPI = self.MPI
        sendbuf = np.ascontiguousarray(sendbuf)
        recvbuf = np.empty_like(sendbuf)
        self.comm.Sendrecv(sendbuf, dest=MPI.PROC_NULL if dest is None else dest, sendtag=tag,
                           recvbuf=recvbuf, source=MPI.PROC_NULL if source is None else source,
                           recvtag=tag)
        return None if source is None else recvbuf

    def allgather(self, obj):
        return self.comm.allgather(obj)

    def bcast(self, obj, root=0):
        return self.comm.bcast(obj, root=root)

    def barrier(self):
        self.comm.Barrier()


def get_comm():
    """MPI communicator when running under ``mpiexec`` with several ranks."""
    try:
        from mpi4py import MPI
    except ImportError:  # pragma: no cover
        return SerialComm()
    if MPI.COMM_WORLD.Get_size() == 1:
        return SerialComm()
    return MPIComm(MPI.COMM_WORLD)


class SubdomainView:
    """One worker's window onto a partitioned grid.

    Parameters
    ----------
    grid : Grid2D
    part : CartesianPartition, optional
        Defaults to the trivial 1x1 partition.
    comm : SerialComm or MPIComm, optional
        Communicator whose size equals ``part.nworkers``.
    """

    def __init__(self, grid: Grid2D, part: CartesianPartition | None = None, comm=None):
        self.grid = grid
        self.part = part if part is not None else partition(grid, 1, 1)
        self.comm = comm if comm is not None else SerialComm()
        if self.comm.size != self.part.nworkers:
            raise InfeasiblePartition(
                f"partition has {self.part.nworkers} workers but communicator has {self.comm.size}")
        if (self.part.nx, self.part.ny) != grid.shape:
            raise InfeasiblePartition("partition does not match the grid")
        self.rank = self.comm.rank
        self.cx, self.cy = self.part.coords(self.rank)
        self.i0, self.i1, self.j0, self.j1 = self.part.owned(self.rank)
        self.shape = (self.i1 - self.i0, self.j1 - self.j0)
        self.at_left = self.i0 == 0
        self.at_right = self.i1 == grid.nx
        self.at_bottom = self.j0 == 0
        self.at_top = self.j1 == grid.ny

    # -- topology ---------------------------------------------------------
    def neighbor(self, dx: int, dy: int):
        cx, cy = self.cx + dx, self.cy + dy
        if 0 <= cx < self.part.px and 0 <= cy < self.part.py:
            return self.part.worker(cx, cy)
        return None

    @property
    def h(self) -> float:
        return self.grid.h

    def coarsen(self) -> SubdomainView:
        return SubdomainView(coarsen_grid(self.grid), self.part.coarsen(), self.comm)

    def can_coarsen(self, min_points: int = 2) -> bool:
        """Whether standard coarsening keeps every block at ``min_points``^2 or more."""
        if not self.grid.coarsenable:
            return False
        bx, by = self.part.coarsen().min_block()
        return bx >= min_points and by >= min_points

    # -- local data -------------------------------------------------------
    def zeros(self, dtype=np.complex128):
        return np.zeros(self.shape, dtype=dtype)

    def local(self, global_array):
        """Owned block of a global array."""
        return global_array[self.i0:self.i1, self.j0:self.j1]

    def local_padded(self, global_array, w: int, fill=0):
        """Owned block plus ``w`` surrounding layers of a global array.

        Positions outside the physical domain are set to ``fill``.
        """
        nx, ny = self.grid.shape
        out = np.full((self.shape[0] + 2 * w, self.shape[1] + 2 * w), fill,
                      dtype=np.asarray(global_array).dtype)
        gi0, gi1 = max(self.i0 - w, 0), min(self.i1 + w, nx)
        gj0, gj1 = max(self.j0 - w, 0), min(self.j1 + w, ny)
        out[gi0 - self.i0 + w:gi1 - self.i0 + w, gj0 - self.j0 + w:gj1 - self.j0 + w] = \
            global_array[gi0:gi1, gj0:gj1]
        return out

    @cached_property
    def global_indices(self):
        """Global ``(I, J)`` index arrays of the owned block."""
        return np.meshgrid(np.arange(self.i0, self.i1), np.arange(self.j0, self.j1), indexing="ij")

    def boundary_mask(self, layers: int = 1):
        """Owned points within ``layers`` points of the physical boundary."""
        I, J = self.global_indices
        nx, ny = self.grid.shape
        d = np.minimum(np.minimum(I, nx - 1 - I), np.minimum(J, ny - 1 - J))
        return d < layers

    def distance_to_boundary(self):
        I, J = self.global_indices
        nx, ny = self.grid.shape
        return np.minimum(np.minimum(I, nx - 1 - I), np.minimum(J, ny - 1 - J))

    def pad(self, u, w: int):
        """Copy of ``u`` with ``w`` halo layers exchanged from the neighbours."""
        p = np.zeros((u.shape[0] + 2 * w, u.shape[1] + 2 * w), dtype=u.dtype)
        p[w:-w, w:-w] = u
        return halo_exchange(p, self, w)

    # -- reductions -------------------------------------------------------
    def dot(self, u, v) -> complex:
        """Global ``sum(conj(u) * v)``."""
        return complex(self.comm.allsum(np.vdot(u, v)))

    def dots(self, us, v):
        """Global inner products of every ``us[m]`` with ``v`` in one reduction."""
        return self.comm.allsum(np.array([np.vdot(u, v) for u in us]))

    def norm(self, u) -> float:
        return math.sqrt(max(self.dot(u, u).real, 0.0))

    def gather(self, u):
        """Assemble the global array on every worker."""
        if self.comm.size == 1:
            return np.array(u, copy=True)
        pieces = self.comm.allgather((self.i0, self.j0, np.asarray(u)))
        out = np.zeros(self.grid.shape, dtype=np.asarray(u).dtype)
        for i0, j0, block in pieces:
            out[i0:i0 + block.shape[0], j0:j0 + block.shape[1]] = block
        return out


def halo_exchange(p, view: SubdomainView, w: int):
    """Fill the ``w``-wide halo of the padded block ``p`` in place.

    Exchanges along x first and then along y including the freshly received
    x-halo columns, so corner cells are filled as well. Halo cells outside the
    physical domain are not touched.
    """
    comm = view.comm
    if comm.size == 1 or w == 0:
        return p
    ni, nj = view.shape
    if ni < w or nj < w:
        raise InfeasiblePartition(f"block {ni}x{nj} is narrower than halo width {w}")
    left, right = view.neighbor(-1, 0), view.neighbor(1, 0)
    down, up = view.neighbor(0, -1), view.neighbor(0, 1)
    inner = slice(w, w + nj)
    # send east, receive from west
    got = comm.sendrecv(p[ni:ni + w, inner], right, left, tag=1)
    if got is not None:
        p[0:w, inner] = got
    got = comm.sendrecv(p[w:2 * w, inner], left, right, tag=2)
    if got is not None:
        p[ni + w:ni + 2 * w, inner] = got
    got = comm.sendrecv(p[:, nj:nj + w], up, down, tag=3)
    if got is not None:
        p[:, 0:w] = got
    got = comm.sendrecv(p[:, w:2 * w], down, up, tag=4)
    if got is not None:
        p[:, nj + w:nj + 2 * w] = got
    return p
