"""Lookup tables backed by CSV files.

Two shapes are needed by the powertrain models: a 1-D table (engine-generator
efficiency against generated power) and a rectangular 2-D table (severity
factor against SoC and current, motor efficiency against speed and torque).
Queries outside the grid clamp to the nearest edge unless ``clamp=False``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MapDomainError(ValueError):
    """Raised when a non-clamping table is queried outside its grid."""


def _read_csv_columns(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header = [h.strip() for h in rows[0]]
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite entries")
    return header, data


@dataclass(frozen=True, eq=False)
class Table1D:
    """Piecewise-linear table y(x) on strictly increasing knots."""

    x: np.ndarray
    y: np.ndarray
    clamp: bool = True

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ValueError("Table1D needs two equal-length 1-D arrays of size >= 2")
        if np.any(np.diff(x) <= 0):
            raise ValueError("Table1D knots must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __call__(self, xq):
        xq = np.asarray(xq, dtype=float)
        if not self.clamp and (np.any(xq < self.x[0]) or np.any(xq > self.x[-1])):
            raise MapDomainError("query outside table domain")
        out = np.interp(xq, self.x, self.y)
        return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class Table2D:
    """Bilinear table z(a, b) on a rectangular grid, ``z[i, j] = z(a[i], b[j])``."""

    a: np.ndarray
    b: np.ndarray
    z: np.ndarray
    clamp: bool = True
    _da: np.ndarray = field(init=False, repr=False, compare=False)
    _db: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if z.shape != (a.size, b.size) or a.size < 2 or b.size < 2:
            raise ValueError("Table2D grid shape mismatch")
        if np.any(np.diff(a) <= 0) or np.any(np.diff(b) <= 0):
            raise ValueError("Table2D axes must be strictly increasing")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "_da", np.diff(a))
        object.__setattr__(self, "_db", np.diff(b))

    def __call__(self, aq, bq):
        aq, bq = np.broadcast_arrays(np.asarray(aq, dtype=float), np.asarray(bq, dtype=float))
        if not self.clamp:
            if (np.any(aq < self.a[0]) or np.any(aq > self.a[-1])
                    or np.any(bq < self.b[0]) or np.any(bq > self.b[-1])):
                raise MapDomainError("query outside table domain")
        ac = np.clip(aq, self.a[0], self.a[-1])
        bc = np.clip(bq, self.b[0], self.b[-1])
        i = np.clip(np.searchsorted(self.a, ac, side="right") - 1, 0, self.a.size - 2)
        j = np.clip(np.searchsorted(self.b, bc, side="right") - 1, 0, self.b.size - 2)
        ta = (ac - self.a[i]) / self._da[i]
        tb = (bc - self.b[j]) / self._db[j]
        z = self.z
        out = ((1 - ta) * (1 - tb) * z[i, j] + ta * (1 - tb) * z[i + 1, j]
               + (1 - ta) * tb * z[i, j + 1] + ta * tb * z[i + 1, j + 1])
        return out if out.ndim else float(out)

    def is_flat(self) -> bool:
        return bool(np.all(self.z == self.z.flat[0]))


def load_table1d(path: str | Path, x_col: str, y_col: str, clamp: bool = True) -> Table1D:
    header, data = _read_csv_columns(path)
    try:
        xi, yi = header.index(x_col), header.index(y_col)
    except ValueError as exc:
        raise ValueError(f"{path}: expected columns {x_col},{y_col}, got {header}") from exc
    order = np.argsort(data[:, xi])
    return Table1D(data[order, xi], data[order, yi], clamp=clamp)


def load_table2d(path: str | Path, a_col: str, b_col: str, z_col: str,
                 clamp: bool = True) -> Table2D:
    """Load a long-format CSV (one row per grid node) into a rectangular table."""
    header, data = _read_csv_columns(path)
    try:
        ai, bi, zi = header.index(a_col), header.index(b_col), header.index(z_col)
    except ValueError as exc:
        raise ValueError(f"{path}: expected columns {a_col},{b_col},{z_col}, got {header}") from exc
    a = np.unique(data[:, ai])
    b = np.unique(data[:, bi])
    if data.shape[0] != a.size * b.size:
        raise ValueError(f"{path}: grid is not rectangular")
    z = np.full((a.size, b.size), np.nan)
    z[np.searchsorted(a, data[:, ai]), np.searchsorted(b, data[:, bi])] = data[:, zi]
    if np.isnan(z).any():
        raise ValueError(f"{path}: grid is not rectangular")
    return Table2D(a, b, z, clamp=clamp)


def save_table2d(path: str | Path, table: Table2D, a_col: str, b_col: str, z_col: str) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([a_col, b_col, z_col])
        for i, av in enumerate(table.a):
            for j, bv in enumerate(table.b):
                w.writerow([repr(float(av)), repr(float(bv)), repr(float(table.z[i, j]))])
