import os
import queue
import shutil
import subprocess
import sys
import threading

import numpy as np
import pytest

from helmdef.grid import SubdomainView, build_grid, partition

# one line per acceptance criterion, printed in the terminal summary
CRITERIA = {}


def record_criterion(number, name, ok, detail=""):
    CRITERIA[number] = (name, bool(ok), detail)
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        name, ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")


# -- in-process workers --------------------------------------------------------

class ThreadGroup:
    """Shared mailbox for a group of :class:`ThreadComm` workers."""

    def __init__(self, size):
        self.size = size
        self.boxes = {}
        self.lock = threading.Lock()
        self.barrier_ = threading.Barrier(size)
        self.slots = [None] * size

    def box(self, key):
        with self.lock:
            return self.boxes.setdefault(key, queue.Queue())


class ThreadComm:
    """Communicator for workers running as threads of one process.

    Mirrors the methods of ``helmdef.grid.MPIComm`` (worker-ordered sums,
    paired send/receive), so the library runs unchanged on it.
    """

    def __init__(self, group, rank):
        self.group = group
        self.rank = rank
        self.size = group.size

    def allgather(self, obj):
        g = self.group
        g.barrier_.wait()
        g.slots[self.rank] = obj
        g.barrier_.wait()
        out = list(g.slots)
        g.barrier_.wait()
        return out

    def allsum(self, values):
        parts = self.allgather(np.asarray(values, dtype=np.complex128))
        out = parts[0].copy()
        for p in parts[1:]:
            out += p
        return out

    def sendrecv(self, sendbuf, dest, source, tag=0):
        if dest is not None:
            self.group.box((self.rank, dest, tag)).put(np.array(sendbuf, copy=True))
        if source is None:
            return None
        return self.group.box((source, self.rank, tag)).get(timeout=60)

    def bcast(self, obj, root=0):
        return self.allgather(obj)[root]

    def barrier(self):
        self.group.barrier_.wait()


def run_threads(size, fn):
    """Run ``fn(comm)`` on ``size`` thread workers; return the per-rank results."""
    group = ThreadGroup(size)
    results = [None] * size
    errors = []

    def target(r):
        try:
            results[r] = fn(ThreadComm(group, r))
        except BaseException as err:  # noqa: BLE001
            errors.append(err)
            group.barrier_.abort()

    threads = [threading.Thread(target=target, args=(r,)) for r in range(size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results


def views_for(grid, px, py, comm):
    return SubdomainView(grid, partition(grid, px, py), comm)


# -- MPI -----------------------------------------------------------------------

def mpi_available():
    if shutil.which("mpiexec") is None:
        return False
    try:
        import mpi4py  # noqa: F401
    except ImportError:
        return False
    return True


def mpi_run(nprocs, script, timeout=1800):
    """Run a Python snippet under ``mpiexec -n nprocs``; return stdout."""
    from helmdef.experiments import _mpi_command, _mpi_env
    cmd = _mpi_command(nprocs) + [sys.executable, "-c", script]
    proc = subprocess.run(cmd, capture_output=True, text=True, env=_mpi_env(), timeout=timeout)
    if proc.returncode != 0:
        raise RuntimeError(f"mpiexec failed ({proc.returncode}):\n{proc.stdout}\n{proc.stderr}")
    return proc.stdout


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rect_grid(nx, ny=None):
    """``nx x ny`` grid with unit width in x and the matching height."""
    ny = nx if ny is None else ny
    return build_grid(nx, ny, (0.0, 0.0, 1.0, (ny - 1) / (nx - 1)))


requires_mpi = pytest.mark.skipif(not mpi_available(), reason="mpiexec/mpi4py not available")
stretch = pytest.mark.skipif(os.environ.get("HELMDEF_STRETCH") != "1",
                             reason="stretch target; set HELMDEF_STRETCH=1")
