"""Cost functionals, problem specifications and run results.

Four supervisory strategies share the same discrete-time model and differ in
running cost, terminal cost and terminal constraint:

* ``TCMS`` prices grid energy, battery wear and fuel in euro; free terminal SoC.
* ``FE`` minimises fuel mass; free terminal SoC.
* ``CS`` minimises fuel mass with the final SoC pinned to the initial one.
* ``ECMS`` minimises fuel mass plus ``zeta * (q_T - q_0)`` grams.

Whatever the strategy optimises, :class:`RunResult` always reports the money
cost of the realised trajectory so that strategies can be compared on the
same footing.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .powertrain import (
    ENGINE_ON_TOL, BatteryParams, EguParams, Fidelity, _fuel_power_unchecked,
    battery_power, ocv, severity,
)

if TYPE_CHECKING:
    from .params import PowertrainParams

J_PER_KWH = 3.6e6


@dataclass(frozen=True)
class CostCoefficients:
    """Economic weights, stored per joule.

    ``zeta`` is the ECMS terminal weight in grams of fuel per unit of SoC;
    ``eta_grid`` divides the grid-energy term (1 leaves it unchanged).
    """

    alpha: float
    beta: float
    gamma: float
    zeta: float = 0.0
    eta_grid: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("cost coefficients must be non-negative")
        if not 0 < self.eta_grid <= 1:
            raise ValueError("eta_grid must lie in (0, 1]")

    @classmethod
    def from_kwh(cls, alpha: float, beta: float, gamma: float, zeta: float = 0.0,
                 eta_grid: float = 1.0) -> "CostCoefficients":
        return cls(alpha / J_PER_KWH, beta / J_PER_KWH, gamma / J_PER_KWH, zeta, eta_grid)

    @classmethod
    def nominal(cls) -> "CostCoefficients":
        return cls.from_kwh(0.2, 500.0, 0.077)

    def per_kwh(self) -> tuple[float, float, float]:
        return self.alpha * J_PER_KWH, self.beta * J_PER_KWH, self.gamma * J_PER_KWH


class Strategy(enum.Enum):
    TCMS = "TCMS"
    ECMS = "ECMS"
    CS = "CS"
    FE = "FE"

    @property
    def fuel_based(self) -> bool:
        return self is not Strategy.TCMS


class Terminal(enum.Enum):
    FREE = "free"
    FIXED = "fixed"
    LINEAR_PENALTY = "linear_penalty"


@dataclass(frozen=True)
class OcpSpec:
    strategy: Strategy
    q0: float = 0.5
    q_bounds: tuple[float, float] = (0.2, 0.9)
    fidelity: Fidelity = Fidelity.M1
    soh_as_state: bool = False
    zeta: float | None = None

    def __post_init__(self):
        lo, hi = self.q_bounds
        if not 0 <= lo < hi <= 1:
            raise ValueError("q_bounds must satisfy 0 <= lo < hi <= 1")
        if not lo <= self.q0 <= hi:
            raise ValueError("q0 outside q_bounds")

    @property
    def terminal(self) -> Terminal:
        return {Strategy.CS: Terminal.FIXED,
                Strategy.ECMS: Terminal.LINEAR_PENALTY}.get(self.strategy, Terminal.FREE)

    def zeta_value(self, coeffs: CostCoefficients) -> float:
        return coeffs.zeta if self.zeta is None else self.zeta


# -------------------------------------------------------------- stage cost --

def money_rate(q_b, i_b, p_r, coeffs: CostCoefficients, bparams: BatteryParams,
               eparams: EguParams, fidelity: Fidelity = Fidelity.M1):
    """Instantaneous money cost [EUR/s] of grid energy, wear and fuel."""
    # grouped exactly like the DP kernel so both produce identical floats
    alpha_v = coeffs.alpha * bparams.v_nom / coeffs.eta_grid
    beta_v_n = coeffs.beta * bparams.v_nom / bparams.n_cycles
    sigma = severity(q_b, i_b, bparams, fidelity)
    p_f = _fuel_power_unchecked(p_r, eparams, fidelity)
    return alpha_v * np.asarray(i_b) + beta_v_n * sigma * np.abs(i_b) + coeffs.gamma * p_f


def generated_power(p_m, q_b, i_b, bparams: BatteryParams, fidelity: Fidelity):
    return p_m - battery_power(i_b, ocv(q_b, bparams, fidelity), bparams.resistance)


def stage_cost(strategy: Strategy, q_b, i_b, p_m, coeffs: CostCoefficients,
               params: "PowertrainParams", dt: float = 1.0,
               fidelity: Fidelity | None = None):
    """Cost of holding ``i_b`` for ``dt`` seconds from SoC ``q_b`` under demand ``p_m``.

    TCMS returns euro; the fuel-based strategies return grams of fuel.
    Raises ``ValueError`` when the implied generator power is outside its range.
    """
    fid = params.fidelity if fidelity is None else fidelity
    b, e = params.battery, params.egu
    p_r = np.asarray(generated_power(p_m, q_b, i_b, b, fid), dtype=float)
    slack = 1e-9 * max(1.0, e.p_max)
    if np.any(p_r < e.p_min - slack) or np.any(p_r > e.p_max + slack):
        raise ValueError("battery current infeasible: generator power out of range")
    p_r = np.where(p_r <= ENGINE_ON_TOL, 0.0, p_r)
    if strategy is Strategy.TCMS:
        out = dt * money_rate(q_b, i_b, p_r, coeffs, b, e, fid)
    else:
        out = dt * _fuel_power_unchecked(p_r, e, fid) / e.lhv
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------- results ---

@dataclass(frozen=True, eq=False)
class RunResult:
    """Closed-loop or DP trajectory on the plant model.

    State arrays (``q``, ``xi``) have ``n + 1`` entries; per-step arrays have
    ``n``.  ``fuel_cum`` and ``cost_cum`` are running totals after each step.
    """

    t: np.ndarray
    p_m: np.ndarray
    q: np.ndarray
    xi: np.ndarray
    i_b: np.ndarray
    p_r: np.ndarray
    p_b: np.ndarray
    p_brake: np.ndarray
    fuel_cum: np.ndarray
    cost_cum: np.ndarray
    v_oc: np.ndarray
    label: str = "run"
    costate: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def cost(self) -> float:
        return float(self.cost_cum[-1]) if self.cost_cum.size else 0.0

    @property
    def fuel_g(self) -> float:
        return float(self.fuel_cum[-1]) if self.fuel_cum.size else 0.0

    @property
    def dq(self) -> float:
        """Final minus initial SoC (negative when the battery was depleted)."""
        return float(self.q[-1] - self.q[0])

    def power_residual(self) -> np.ndarray:
        """Relative power-balance error of every step."""
        p_b = battery_power(self.i_b, self.v_oc, self._resistance)
        scale = np.maximum(np.maximum(np.abs(self.p_m), np.abs(self.p_r)), 1.0)
        return np.abs(self.p_m + self.p_brake - self.p_r - p_b) / scale

    @property
    def _resistance(self) -> float:
        return self.meta["R_b"]

    def to_csv(self, path: str | Path) -> None:
        n = self.i_b.size
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "q_b", "xi_b", "i_b_A", "P_r_W", "fuel_g", "cost_eur"])
            for k in range(n):
                w.writerow([repr(float(x)) for x in (
                    self.t[k], self.q[k], self.xi[k], self.i_b[k], self.p_r[k],
                    self.fuel_cum[k], self.cost_cum[k])])
            if n:
                ts = float(self.t[1] - self.t[0]) if n > 1 else 1.0
                w.writerow([repr(float(x)) for x in (
                    self.t[-1] + ts, self.q[-1], self.xi[-1], 0.0, 0.0,
                    self.fuel_cum[-1], self.cost_cum[-1])])

    def summary(self) -> dict:
        return {"label": self.label, "cost_eur": self.cost, "fuel_g": self.fuel_g,
                "dq_b": self.dq, "q_T": float(self.q[-1])}
