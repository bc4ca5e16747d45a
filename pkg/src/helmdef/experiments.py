"""Experiment driver: configs, model problems, report files and scaling runs.

A run is described by a flat ``key = value`` text file (``#`` starts a
comment) plus ``key=value`` overrides, which win. Each run appends one row
to ``results.csv`` in the output directory and writes a residual history
(one preconditioned relative residual per line, starting with the initial
one) and a JSON report echoing the configuration.

Model problems
--------------
``mp2a`` / ``mp2b``
    Unit square, constant wavenumber, point source at the centre; Dirichlet
    (``mp2a``) or first-order absorbing (``mp2b``) boundaries.
``wedge``
    Three-layer model on ``(0, 600) x (-1000, 0)``, source at ``(300, 0)``.
``velocity-file``
    Velocities read from an ASCII grid file.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .coarse import normalize_variant
from .deflation import DeflationConfig, TwoLevelPreconditioner, normalize_deflation, solve
from .grid import (GridError, InfeasiblePartition, SubdomainView, build_grid, get_comm,
                   partition)
from .media import (MediaError, constant_k, layered_k, load_velocity_grid, max_kh,
                    point_source_rhs, read_velocity_file, wedge_model)
from .operators import BoundaryCondition

__all__ = [
    "CSV_COLUMNS", "PROBLEMS", "ConfigError", "ExperimentConfig", "ExperimentResult",
    "Problem", "ScalingRecord", "build_problem", "compute_speedup", "factor_workers",
    "load_config", "parse_config", "run_experiment", "scaling_harness", "write_config",
]

logger = logging.getLogger(__name__)

PROBLEMS = ("mp2a", "mp2b", "wedge", "velocity-file")

CSV_COLUMNS = (
    "problem", "k_or_f", "nx", "ny", "kh", "bc", "deflation", "coarse_op", "outer_solver",
    "outer_tol", "coarse_tol", "px", "py", "outer_iters", "avg_coarse_iters",
    "max_coarse_iters", "wall_time_s", "final_relres_precond", "final_relres_true",
)

MAX_KH = 0.7
WEDGE_EXTENTS = (0.0, -1000.0, 600.0, 0.0)


class ConfigError(ValueError):
    """Invalid configuration; the message names the key (and line, if known)."""

    def __init__(self, message, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass
class ExperimentConfig:
    """One solver run.

    Either ``nx``/``ny`` or a target ``kh`` fixes the grid. ``coarse_tol``
    defaults to 1e-6 with a GMRES outer solver and 1e-1 with GCR.
    ``mg_coarsest_points`` bounds the coarsest multigrid grid from below;
    raising it (e.g. to 9) gives every partition the same hierarchy depth.
    """

    problem: str = "mp2b"
    k: float | None = None
    f: float | None = None
    nx: int | None = None
    ny: int | None = None
    kh: float | None = None
    bc: str | None = None
    deflation: str = "APD"
    coarse_op: str = "StrGlk"
    outer_solver: str = "gmres"
    outer_tol: float = 1e-6
    maxit: int = 500
    coarse_tol: float | None = None
    coarse_maxit: int = 1000
    coarse_mode: str | None = None
    mg_coarsest_points: int = 3
    shift: tuple = (1.0, -0.5)
    scale: float = 1.0
    gamma: float = 1.0
    transfer: str | None = None
    px: int = 1
    py: int = 1
    seed: int = 0
    rhs: str = "point"
    source: tuple | None = None
    velocities: tuple = (2000.0, 1500.0, 3000.0)
    velocity_file: str | None = None
    extents: tuple | None = None
    resample: bool = False
    allow_large_kh: bool = False
    output_dir: str = "."
    tag: str = "run"

    def __post_init__(self):
        self.validate()

    # -- validation ------------------------------------------------------------
    def validate(self):
        p = str(self.problem).lower()
        if p not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {PROBLEMS}", "problem")
        self.problem = p
        if p in ("mp2a", "mp2b"):
            if self.k is None:
                raise ConfigError("constant-wavenumber problems need k", "k")
            if not self.k > 0:
                raise ConfigError("k must be positive", "k")
        else:
            if self.f is None:
                raise ConfigError("heterogeneous problems need a frequency f", "f")
            if not self.f > 0:
                raise ConfigError("f must be positive", "f")
        if p == "velocity-file" and not self.velocity_file:
            raise ConfigError("velocity-file problem needs velocity_file", "velocity_file")
        if self.bc is None:
            self.bc = "dirichlet" if p == "mp2a" else "sommerfeld"
        try:
            self.bc = BoundaryCondition.coerce(self.bc).kind
        except ValueError as err:
            raise ConfigError(str(err), "bc") from None
        try:
            self.deflation = normalize_deflation(self.deflation)
        except ValueError as err:
            raise ConfigError(str(err), "deflation") from None
        try:
            self.coarse_op = normalize_variant(self.coarse_op)
        except ValueError as err:
            raise ConfigError(str(err), "coarse_op") from None
        self.outer_solver = str(self.outer_solver).lower()
        if self.outer_solver not in ("gmres", "gcr", "fgmres"):
            raise ConfigError("outer_solver must be gmres, gcr or fgmres", "outer_solver")
        if self.coarse_tol is None:
            self.coarse_tol = 1e-1 if self.outer_solver == "gcr" else 1e-6
        for key in ("outer_tol", "coarse_tol"):
            v = getattr(self, key)
            if not 0 < v < 1:
                raise ConfigError("tolerance must lie in (0, 1)", key)
        for key in ("px", "py", "maxit", "coarse_maxit", "mg_coarsest_points"):
            if int(getattr(self, key)) < 1:
                raise ConfigError("must be a positive integer", key)
        if self.rhs not in ("point", "zero", "random"):
            raise ConfigError("rhs must be point, zero or random", "rhs")
        if len(self.shift) != 2:
            raise ConfigError("shift takes two numbers", "shift")
        if (self.nx is None) != (self.ny is None):
            raise ConfigError("give both nx and ny", "nx" if self.nx is None else "ny")
        if self.nx is None and self.kh is None and p != "velocity-file":
            raise ConfigError("give nx/ny or a target kh", "kh")

    def as_dict(self):
        return dataclasses.asdict(self)

    @property
    def k_or_f(self):
        return self.k if self.problem in ("mp2a", "mp2b") else self.f


# -- config text -----------------------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_KEYS = {"nx", "ny", "maxit", "coarse_maxit", "px", "py", "seed", "mg_coarsest_points"}
_FLOAT_KEYS = {"k", "f", "kh", "outer_tol", "coarse_tol", "gamma"}
_TUPLE_KEYS = {"shift", "source", "velocities", "extents"}
_BOOL_KEYS = {"resample", "allow_large_kh"}


def _convert(key, raw, line=None):
    if key not in _FIELDS:
        raise ConfigError("unknown key", key, line)
    s = raw.strip()
    if s.lower() in ("none", "null", ""):
        return None
    try:
        if key in _INT_KEYS:
            v = float(s)
            if v != int(v):
                raise ValueError(f"{s} is not an integer")
            return int(v)
        if key in _FLOAT_KEYS:
            return float(s)
        if key == "scale":
            return s if s == "auto" else float(s)
        if key in _TUPLE_KEYS:
            return tuple(float(t) for t in s.replace("(", "").replace(")", "").split(",") if t.strip())
        if key in _BOOL_KEYS:
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"{s!r} is not a boolean")
    except ValueError as err:
        raise ConfigError(str(err), key, line) from None
    return s


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines into a dict of typed values."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw.strip()!r}", line=n)
        key, value = (t.strip() for t in line.split("=", 1))
        out[key] = _convert(key, value, n)
    return out


def _overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (t.strip() for t in item.split("=", 1))
        out[key] = _convert(key, value)
    return out


def load_config(path=None, overrides=None, text=None) -> ExperimentConfig:
    """Build a config from a file (or ``text``) and ``key=value`` overrides."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as err:
            raise ConfigError(f"cannot read config file: {err}") from None
    if text is not None:
        values.update(parse_config(text))
    values.update(_overrides(overrides))
    try:
        return ExperimentConfig(**values)
    except TypeError as err:
        raise ConfigError(str(err)) from None


def write_config(cfg: ExperimentConfig, path):
    with open(path, "w") as fh:
        for key, value in cfg.as_dict().items():
            if value is None:
                continue
            if isinstance(value, (tuple, list)):
                value = ",".join(repr(float(v)) for v in value)
            fh.write(f"{key} = {value}\n")


# -- problems --------------------------------------------------------------------

@dataclass
class Problem:
    grid: object
    k: np.ndarray
    bc: str
    rhs: np.ndarray
    kh: float


def _odd_points(length, h_max):
    """Smallest odd point count whose spacing does not exceed ``h_max``."""
    n = int(math.ceil(length / h_max - 1e-9)) + 1
    return n if n % 2 == 1 else n + 1


def _grid_for(cfg: ExperimentConfig, extents, kmax):
    if cfg.nx is not None:
        return build_grid(cfg.nx, cfg.ny, extents)
    h_max = cfg.kh / kmax
    lx, ly = extents[2] - extents[0], extents[3] - extents[1]
    if math.isclose(lx, ly):
        n = _odd_points(lx, h_max)
        return build_grid(n, n, extents)
    # smallest common refinement of the two sides keeping h equal and counts odd
    fx, fy = (lx / math.gcd(int(round(lx)), int(round(ly))),
              ly / math.gcd(int(round(lx)), int(round(ly))))
    m = 1
    while True:
        nxm1, nym1 = 2 * m * fx, 2 * m * fy
        if lx / nxm1 <= h_max * (1 + 1e-12):
            return build_grid(int(nxm1) + 1, int(nym1) + 1, extents)
        m += 1


def build_problem(cfg: ExperimentConfig) -> Problem:
    """Grid, wavenumber, boundary condition and right-hand side of ``cfg``."""
    try:
        if cfg.problem in ("mp2a", "mp2b"):
            extents = tuple(cfg.extents) if cfg.extents else (0.0, 0.0, 1.0, 1.0)
            grid = _grid_for(cfg, extents, cfg.k)
            k = constant_k(grid, cfg.k)
            source = cfg.source or ((extents[0] + extents[2]) / 2, (extents[1] + extents[3]) / 2)
        elif cfg.problem == "wedge":
            model = wedge_model(cfg.velocities)
            extents = WEDGE_EXTENTS
            kmax = 2 * math.pi * cfg.f / min(cfg.velocities)
            grid = _grid_for(cfg, extents, kmax)
            k = layered_k(grid, model, cfg.f)
            source = cfg.source or (300.0, 0.0)
        else:
            c = read_velocity_file(cfg.velocity_file)
            if cfg.extents:
                extents = tuple(cfg.extents)
            else:
                extents = (0.0, -(c.shape[1] - 1), c.shape[0] - 1.0, 0.0)
            if cfg.nx is None and cfg.kh is None:
                grid = build_grid(c.shape[0], c.shape[1], extents)
            else:
                grid = _grid_for(cfg, extents, 2 * math.pi * cfg.f / c.min())
            k = load_velocity_grid(cfg.velocity_file, grid, cfg.f, resample=cfg.resample)
            source = cfg.source or ((extents[0] + extents[2]) / 2, extents[3])
    except (GridError, MediaError) as err:
        raise ConfigError(str(err)) from None
    kh = max_kh(k, grid.h)
    if kh > MAX_KH and not cfg.allow_large_kh:
        raise ConfigError(f"kh = {kh:.4f} exceeds {MAX_KH}; set allow_large_kh to force", "kh")
    if not grid.coarsenable:
        raise ConfigError(f"grid {grid.nx}x{grid.ny} cannot be coarsened (odd counts >= 5 needed)",
                          "nx")
    if cfg.rhs == "zero":
        b = np.zeros(grid.shape, dtype=complex)
    elif cfg.rhs == "random":
        rng = np.random.default_rng(cfg.seed)
        b = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    else:
        try:
            b = point_source_rhs(grid, source)
        except MediaError as err:
            raise ConfigError(str(err), "source") from None
    return Problem(grid, k, cfg.bc, b, kh)


# -- single run ------------------------------------------------------------------

@dataclass
class ExperimentResult:
    row: dict
    report: dict
    history: list
    paths: dict = field(default_factory=dict)


def _deflation_config(cfg: ExperimentConfig) -> DeflationConfig:
    return DeflationConfig(variant=cfg.deflation, coarse_op=cfg.coarse_op, gamma=cfg.gamma,
                           coarse_tol=cfg.coarse_tol, coarse_maxit=cfg.coarse_maxit,
                           coarse_mode=cfg.coarse_mode, shift=tuple(cfg.shift),
                           transfer=cfg.transfer, scale=cfg.scale,
                           mg_coarsest_points=cfg.mg_coarsest_points)


def run_experiment(cfg: ExperimentConfig, comm=None, write: bool = True) -> ExperimentResult:
    """Run one solve and (on worker 0) write the CSV row, history and JSON report.

    Raises
    ------
    ConfigError
        Invalid configuration or partition.
    """
    comm = comm if comm is not None else get_comm()
    prob = build_problem(cfg)
    if comm.size != cfg.px * cfg.py:
        raise ConfigError(f"partition {cfg.px}x{cfg.py} needs {cfg.px * cfg.py} workers, "
                          f"{comm.size} running", "px")
    try:
        part = partition(prob.grid, cfg.px, cfg.py)
        view = SubdomainView(prob.grid, part, comm)
    except GridError as err:
        raise ConfigError(str(err), "px") from None
    t_setup = time.perf_counter()
    try:
        pre = TwoLevelPreconditioner(view, prob.k, prob.bc, _deflation_config(cfg))
    except (GridError, ValueError) as err:
        raise ConfigError(str(err)) from None
    setup = time.perf_counter() - t_setup
    b = np.ascontiguousarray(view.local(prob.rhs))
    comm.barrier()
    _, rep = solve(pre, b, outer=cfg.outer_solver, tol=cfg.outer_tol, maxit=cfg.maxit)
    wall = max(comm.allgather(rep.wall_time))
    rep.wall_time = wall
    row = {
        "problem": cfg.problem, "k_or_f": cfg.k_or_f, "nx": prob.grid.nx, "ny": prob.grid.ny,
        "kh": round(prob.kh, 6), "bc": prob.bc, "deflation": cfg.deflation,
        "coarse_op": cfg.coarse_op, "outer_solver": cfg.outer_solver,
        "outer_tol": cfg.outer_tol, "coarse_tol": cfg.coarse_tol, "px": cfg.px, "py": cfg.py,
        "outer_iters": rep.iterations, "avg_coarse_iters": round(rep.avg_coarse_iterations, 2),
        "max_coarse_iters": rep.max_coarse_iterations, "wall_time_s": round(wall, 6),
        "final_relres_precond": rep.relres_precond, "final_relres_true": rep.relres_true,
    }
    report = {"config": cfg.as_dict(), "grid": [prob.grid.nx, prob.grid.ny], "h": prob.grid.h,
              "kh": prob.kh, "setup_time_s": setup, "workers": comm.size,
              "report": rep.as_dict()}
    result = ExperimentResult(row, report, list(rep.history))
    if write and comm.rank == 0:
        result.paths = _write_outputs(cfg, result)
    logger.info("%s: %d outer iterations, true relres %.2e, %.3fs", cfg.tag, rep.iterations,
                rep.relres_true, wall)
    return result


def _write_outputs(cfg, result):
    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, "results.csv")
    new = not os.path.exists(csv_path) or os.path.getsize(csv_path) == 0
    with open(csv_path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if new:
            w.writeheader()
        w.writerow(result.row)
    hist_path = os.path.join(cfg.output_dir, f"{cfg.tag}_history.txt")
    with open(hist_path, "w") as fh:
        fh.writelines(f"{h:.16e}\n" for h in result.history)
    json_path = os.path.join(cfg.output_dir, f"{cfg.tag}.json")
    with open(json_path, "w") as fh:
        json.dump(result.report, fh, indent=2, default=_jsonable)
    return {"csv": csv_path, "history": hist_path, "json": json_path}


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")


# -- scaling ---------------------------------------------------------------------

@dataclass
class ScalingRecord:
    """Timing of one run in a scaling sweep."""

    workers: int
    px: int
    py: int
    nx: int
    ny: int
    wall_time: float
    outer_iters: int
    speedup: float = float("nan")
    efficiency: float = float("nan")
    history: list = field(default_factory=list)

    def as_dict(self):
        return dataclasses.asdict(self)


def factor_workers(p: int) -> tuple[int, int]:
    """Most nearly square ``px x py = p`` with ``px >= py``."""
    if p < 1:
        raise InfeasiblePartition("worker count must be positive")
    py = int(math.isqrt(p))
    while p % py:
        py -= 1
    return p // py, py


def compute_speedup(records, reference: int = 0):
    """Fill ``S_p = t_r / t_p`` and ``E_p = S_p / (n_p / n_r)`` against ``records[reference]``."""
    ref = records[reference]
    for r in records:
        r.speedup = ref.wall_time / r.wall_time if r.wall_time > 0 else float("inf")
        r.efficiency = r.speedup / (r.workers / ref.workers)
    return records


def _mpi_command(p):
    exe = shutil.which("mpiexec") or shutil.which("mpirun")
    if exe is None:
        raise InfeasiblePartition(f"{p} workers requested but no mpiexec found")
    cmd = [exe, "-n", str(p)]
    out = subprocess.run([exe, "--version"], capture_output=True, text=True).stdout
    if "Open MPI" in out or "OpenRTE" in out:
        cmd.append("--oversubscribe")
    return cmd


def _mpi_env():
    env = dict(os.environ)
    env.setdefault("OMPI_ALLOW_RUN_AS_ROOT", "1")
    env.setdefault("OMPI_ALLOW_RUN_AS_ROOT_CONFIRM", "1")
    env.setdefault("OMP_NUM_THREADS", "1")
    return env


def run_spmd(cfg: ExperimentConfig, workers: int, timeout=None) -> dict:
    """Run ``cfg`` on ``workers`` MPI processes and return its JSON report."""
    with tempfile.TemporaryDirectory() as tmp:
        cfg = dataclasses.replace(cfg, output_dir=tmp, tag="spmd")
        path = os.path.join(tmp, "run.cfg")
        write_config(cfg, path)
        cmd = _mpi_command(workers) + [sys.executable, "-m", "helmdef", "run", "--config", path]
        proc = subprocess.run(cmd, capture_output=True, text=True, env=_mpi_env(),
                              timeout=timeout)
        if proc.returncode != 0:
            raise RuntimeError(f"SPMD run failed ({proc.returncode}):\n{proc.stderr[-2000:]}")
        with open(os.path.join(tmp, "spmd.json")) as fh:
            return json.load(fh)


def scaling_harness(cfg: ExperimentConfig, worker_counts, mode: str = "strong",
                    timeout=None) -> list[ScalingRecord]:
    """Run ``cfg`` for each worker count and compute speedup and efficiency.

    ``mode="strong"`` keeps the problem fixed; ``mode="weak"`` grows the
    grid so that the points per worker stay constant, scaling ``k`` (or
    ``f``) with ``1/h`` to keep ``kh`` fixed. The first count is the
    reference. Runs execute one after another.
    """
    if mode not in ("strong", "weak"):
        raise ValueError("mode must be strong or weak")
    counts = [int(p) for p in worker_counts]
    if not counts:
        raise InfeasiblePartition("no worker counts given")
    base = build_problem(cfg).grid
    records = []
    for p in counts:
        px, py = factor_workers(p)
        run_cfg = dataclasses.replace(cfg, px=px, py=py, nx=base.nx, ny=base.ny, kh=None)
        if mode == "weak":
            ratio = math.sqrt(p / counts[0])
            nx = int(round((base.nx - 1) * ratio)) + 1
            ny = int(round((base.ny - 1) * ratio)) + 1
            nx, ny = nx + (nx % 2 == 0), ny + (ny % 2 == 0)
            grow = (nx - 1) / (base.nx - 1)
            run_cfg = dataclasses.replace(
                run_cfg, nx=nx, ny=ny,
                k=cfg.k * grow if cfg.k is not None else None,
                f=cfg.f * grow if cfg.f is not None else None)
        try:
            partition(build_problem(run_cfg).grid, px, py)
        except GridError as err:
            raise InfeasiblePartition(str(err)) from None
        if p == 1 and get_comm().size == 1:
            res = run_experiment(run_cfg, write=False)
            rep = res.report
        else:
            rep = run_spmd(run_cfg, p, timeout=timeout)
        r = rep["report"]
        records.append(ScalingRecord(p, px, py, run_cfg.nx, run_cfg.ny, r["wall_time"],
                                     r["iterations"], history=r["history"]))
        logger.info("%s scaling: %d workers, %.3fs, %d iterations", mode, p, r["wall_time"],
                    r["iterations"])
    return compute_speedup(records)
