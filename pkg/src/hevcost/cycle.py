"""Driving cycles: loading, validation, resampling and concatenation.

Cycle files are plain CSV with header ``t_s,v_mps[,slope_rad]``.  The shipped
cycles (``udds``, ``hwfet``, ``ftp75``) are the US EPA dynamometer schedules at
1 Hz; see ``data/cycles/README.md`` for provenance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

# relative tolerance when checking that a time grid is uniform
_GRID_RTOL = 1e-9


class CycleError(ValueError):
    pass


@dataclass(frozen=True)
class DrivingCycle:
    """Speed/slope mission on a uniform time grid.

    Arrays are copied and made read-only on construction so a cycle can be
    shared freely between solvers.
    """

    t: np.ndarray
    speed: np.ndarray
    slope: np.ndarray
    name: str = "cycle"

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        v = np.array(self.speed, dtype=float)
        th = np.array(self.slope, dtype=float)
        if not (t.ndim == v.ndim == th.ndim == 1) or not (t.size == v.size == th.size):
            raise CycleError("time, speed and slope must be 1-D arrays of equal length")
        if t.size and not (np.all(np.isfinite(t)) and np.all(np.isfinite(v)) and np.all(np.isfinite(th))):
            raise CycleError("NaN or infinite entries in cycle")
        if np.any(v < 0):
            raise CycleError("negative speed in cycle")
        if t.size >= 2:
            dt = np.diff(t)
            if np.any(dt <= 0):
                raise CycleError("time column is not strictly increasing")
            if np.max(np.abs(dt - dt[0])) > _GRID_RTOL * max(dt[0], 1.0):
                raise CycleError("non-uniform time grid")
        elif t.size == 1:
            raise CycleError("a cycle needs at least two samples")
        for arr in (t, v, th):
            arr.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "speed", v)
        object.__setattr__(self, "slope", th)

    @classmethod
    def empty(cls, name: str = "empty") -> "DrivingCycle":
        return cls(np.empty(0), np.empty(0), np.empty(0), name)

    def __len__(self) -> int:
        return self.t.size

    @property
    def ts(self) -> float:
        """Sampling step in seconds."""
        if len(self) < 2:
            raise CycleError("empty cycle has no time step")
        return float(self.t[1] - self.t[0])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    def distance(self) -> float:
        """Travelled distance in metres (trapezoidal rule)."""
        return float(np.trapezoid(self.speed, self.t)) if len(self) else 0.0


def load_cycle(path: str | Path, name: str | None = None, resample_to: float | None = None) -> DrivingCycle:
    """Read a cycle CSV.

    Non-uniform grids are rejected unless ``resample_to`` is given, in which
    case the raw samples are linearly interpolated onto that step.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [r for r in reader if r]
    if header[:2] != ["t_s", "v_mps"] or (len(header) > 2 and header[2] != "slope_rad"):
        raise CycleError(f"{path}: expected header t_s,v_mps[,slope_rad], got {header}")
    try:
        data = np.array([[float(x) for x in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise CycleError(f"{path}: unparsable entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise CycleError(f"{path}: ragged rows")
    t, v = data[:, 0], data[:, 1]
    th = data[:, 2] if data.shape[1] > 2 else np.zeros_like(t)
    name = name or path.stem
    if resample_to is not None:
        if np.any(np.isnan(data)):
            raise CycleError("NaN or infinite entries in cycle")
        if np.any(np.diff(t) <= 0):
            raise CycleError("time column is not strictly increasing")
        grid = _uniform_grid(t[0], t[-1], resample_to)
        return DrivingCycle(grid, np.interp(grid, t, v), np.interp(grid, t, th), name)
    return DrivingCycle(t, v, th, name)


def save_cycle(cycle: DrivingCycle, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "v_mps", "slope_rad"])
        for row in zip(cycle.t, cycle.speed, cycle.slope):
            w.writerow([repr(float(x)) for x in row])


def _uniform_grid(t0: float, t1: float, step: float) -> np.ndarray:
    if step <= 0:
        raise CycleError("time step must be positive")
    n = int(np.floor((t1 - t0) / step + 1e-9))
    grid = t0 + step * np.arange(n + 1)
    if grid[-1] < t1 - 1e-9 * step:
        grid = np.append(grid, t1)
    return grid


def resample_cycle(cycle: DrivingCycle, new_ts: float) -> DrivingCycle:
    """Linear interpolation onto a uniform grid of step ``new_ts``.

    The first and last timestamps are kept; if the duration is not a
    multiple of ``new_ts`` the grid is truncated at the last full step.
    """
    if new_ts <= 0:
        raise CycleError("new_ts must be positive")
    if len(cycle) < 2:
        return cycle
    if abs(new_ts - cycle.ts) <= _GRID_RTOL * cycle.ts:
        return cycle
    n = int(np.floor(cycle.duration / new_ts + 1e-9))
    if n < 1:
        raise CycleError(f"cycle of {cycle.duration} s is shorter than the new step {new_ts} s")
    grid = cycle.t[0] + new_ts * np.arange(n + 1)
    return DrivingCycle(grid, np.interp(grid, cycle.t, cycle.speed),
                        np.interp(grid, cycle.t, cycle.slope), cycle.name)


def concat_cycles(a: DrivingCycle, b: DrivingCycle, name: str | None = None) -> DrivingCycle:
    """Back-to-back concatenation; ``b`` is shifted to continue ``a``'s grid."""
    if len(b) == 0:
        return a if name is None else DrivingCycle(a.t, a.speed, a.slope, name)
    if len(a) == 0:
        return b if name is None else DrivingCycle(b.t, b.speed, b.slope, name)
    if abs(a.ts - b.ts) > _GRID_RTOL * a.ts:
        raise CycleError(f"mismatched time steps {a.ts} and {b.ts}")
    ts = a.ts
    tb = a.t[-1] + ts + (b.t - b.t[0])
    return DrivingCycle(np.concatenate([a.t, tb]), np.concatenate([a.speed, b.speed]),
                        np.concatenate([a.slope, b.slope]), name or f"{a.name}+{b.name}")


SHIPPED_CYCLES = {"udds": "udds.csv", "hwfet": "hwfet.csv", "ftp75": "ftp75.csv"}


def builtin_cycle(name: str) -> DrivingCycle:
    """Shipped cycles by name.

    ``urban`` is the FTP-75 schedule and ``highway`` is HWFET; ``combined``
    is ``urban`` followed by ``highway``.  The raw ``udds``, ``hwfet`` and
    ``ftp75`` files are also addressable directly.
    """
    aliases = {"urban": "ftp75", "highway": "hwfet"}
    if name == "combined":
        return concat_cycles(builtin_cycle("urban"), builtin_cycle("highway"), name="combined")
    key = aliases.get(name, name)
    if key not in SHIPPED_CYCLES:
        raise KeyError(f"unknown cycle {name!r}; known: {sorted([*SHIPPED_CYCLES, *aliases, 'combined'])}")
    ref = resources.files("hevcost") / "data" / "cycles" / SHIPPED_CYCLES[key]
    with resources.as_file(ref) as p:
        return load_cycle(p, name=name)


def resolve_cycle(ref: str) -> DrivingCycle:
    """A built-in cycle name, or a path to a cycle CSV."""
    p = Path(ref)
    if p.suffix == ".csv" or p.exists():
        return load_cycle(p)
    return builtin_cycle(ref)
