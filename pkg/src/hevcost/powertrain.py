"""Battery and engine-generator models at two fidelity levels.

All quantities are SI: capacity in coulombs, power in watts, fuel energy
in J/g.  Positive battery current discharges the battery.

``M1`` is the full control-oriented model (affine OCV in SoC, severity map,
EGU efficiency map); ``M2`` the simplified one (constant OCV, constant
severity, affine fuel power).  With ``ocv_slope == 0``, no severity map and
no efficiency map the two coincide.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np

from .maps import Table1D, Table2D

# generated power at or below this is treated as "engine off" (W)
ENGINE_ON_TOL = 1e-6
# clamp slack for the circuit discriminant at the parabola vertex
DISCRIMINANT_SLACK = 1e-9


class Fidelity(enum.Enum):
    M1 = "M1_full"
    M2 = "M2_simplified"


class InfeasibleDemand(ValueError):
    """The motor demand cannot be met within battery and generator limits."""


SeverityLike = Union[Table2D, Callable[[np.ndarray, np.ndarray], np.ndarray]]
EfficiencyLike = Union[Table1D, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class BatteryParams:
    ocv_slope: float = 70.0           # A_b [V]
    ocv_offset: float = 320.0         # B_b [V]
    v_nom: float = 355.0              # [V]
    resistance: float = 0.5           # R_b [ohm]
    q_nom: float = 65.0 * 3600.0      # nominal capacity [C]
    n_cycles: float = 2000.0          # N_b
    sigma_map: SeverityLike | None = None
    sigma_nominal: float = 1.0
    soh_initial: float = 0.0          # xi_b at mission start
    p_min: float = -50e3              # [W]
    p_max: float = 50e3               # [W]
    q_min: float = 0.2
    q_max: float = 0.9

    def __post_init__(self):
        if self.resistance <= 0 or self.q_nom <= 0 or self.n_cycles <= 0 or self.v_nom <= 0:
            raise ValueError("R_b, Q_nom, N_b and v_nom must be positive")
        if not self.p_min <= 0 <= self.p_max:
            raise ValueError("battery power limits must bracket zero")
        if self.sigma_nominal < 0:
            raise ValueError("severity must be non-negative")
        if isinstance(self.sigma_map, Table2D) and np.any(self.sigma_map.z < 0):
            raise ValueError("severity map has negative entries")
        if not 0.0 <= self.soh_initial <= 1.0:
            raise ValueError("initial state of health must lie in [0, 1]")
        if not 0.0 <= self.q_min < self.q_max <= 1.0:
            raise ValueError("SoC bounds must satisfy 0 <= q_min < q_max <= 1")

    def capacity(self, soh: float | np.ndarray | None = None):
        """Usable capacity Q_b [C]; fades linearly to 80 % at end of life."""
        xi = self.soh_initial if soh is None else soh
        return self.q_nom * (1.0 - 0.2 * xi)

    def with_ocv_slope(self, slope: float, pivot: float = 0.5) -> "BatteryParams":
        """Change the OCV slope keeping ``ocv(pivot) == v_nom``."""
        return replace(self, ocv_slope=slope, ocv_offset=self.v_nom - slope * pivot)


@dataclass(frozen=True)
class EguParams:
    a_r: float = 3.43                 # [-]
    b_r: float = 5610.0               # idle fuel power [W]
    eta_map: EfficiencyLike | None = None
    lhv: float = 47e3                 # [J/g]
    fuel_density: float = 0.2         # [kg/L], reporting only
    p_min: float = 0.0                # [W]
    p_max: float = 25e3               # [W]

    def __post_init__(self):
        if self.lhv <= 0 or self.a_r <= 0:
            raise ValueError("lambda_r and A_r must be positive")
        if not 0 <= self.p_min < self.p_max:
            raise ValueError("EGU power limits must satisfy 0 <= P_min < P_max")
        if isinstance(self.eta_map, Table1D):
            if np.any(self.eta_map.y <= 0) or np.any(self.eta_map.y > 1):
                raise ValueError("EGU efficiency map values must lie in (0, 1]")
            if self.eta_map.x[0] <= 0:
                raise ValueError("EGU efficiency map knots must be at positive power")
            # fuel power is interpolated between knots, so cache P/eta at the knots
            object.__setattr__(self, "_fuel_knots", self.eta_map.x / self.eta_map.y)

    def fuel_power_on(self, p_r, fidelity: Fidelity):
        """Fuel power with the engine running (no on/off gating)."""
        if fidelity is Fidelity.M2 or self.eta_map is None:
            return self.a_r * np.asarray(p_r) + self.b_r
        if isinstance(self.eta_map, Table1D):
            return np.interp(p_r, self.eta_map.x, self._fuel_knots)
        return np.asarray(p_r) / self.eta_map(p_r)


# ---------------------------------------------------------------- battery ---

def _check_soc(q):
    if np.any(np.asarray(q) < 0) or np.any(np.asarray(q) > 1):
        raise ValueError("state of charge outside [0, 1]")


def ocv(q_b, params: BatteryParams, fidelity: Fidelity = Fidelity.M1):
    """Open-circuit voltage [V]."""
    _check_soc(q_b)
    if fidelity is Fidelity.M2:
        return params.v_nom if np.ndim(q_b) == 0 else np.full(np.shape(q_b), params.v_nom)
    return params.ocv_slope * q_b + params.ocv_offset


def battery_power(i_b, v_oc, resistance):
    """Terminal power (v_oc - R i) i [W]."""
    return (v_oc - resistance * i_b) * i_b


def current_for_power(p_b, v_oc, resistance):
    """Smaller root of (v_oc - R i) i = P; NaN where P exceeds the vertex."""
    disc = np.asarray(v_oc * v_oc - 4.0 * resistance * p_b, dtype=float)
    disc = np.where((disc < 0) & (disc >= -DISCRIMINANT_SLACK * v_oc * v_oc), 0.0, disc)
    with np.errstate(invalid="ignore"):
        out = (v_oc - np.sqrt(disc)) / (2.0 * resistance)
    return out if out.ndim else float(out)


def severity(q_b, i_b, params: BatteryParams, fidelity: Fidelity = Fidelity.M1):
    """Severity factor sigma_b; edge-clamped map lookup under M1."""
    _check_soc(q_b)
    if fidelity is Fidelity.M2 or params.sigma_map is None:
        shape = np.broadcast(np.asarray(q_b), np.asarray(i_b)).shape
        return params.sigma_nominal if shape == () else np.full(shape, params.sigma_nominal)
    return params.sigma_map(q_b, i_b)


@dataclass(frozen=True)
class BatteryState:
    soc: float
    soh: float = 0.0
    out_of_bounds: bool = False

    def __post_init__(self):
        if not 0.0 <= self.soh <= 1.0:
            raise ValueError("state of health outside [0, 1]")

    @property
    def dod(self) -> float:
        return 1.0 - self.soc


def battery_step(state: BatteryState, i_b: float, dt: float, params: BatteryParams,
                 fidelity: Fidelity = Fidelity.M1, soh_feedback: bool = False) -> BatteryState:
    """Backward-Euler update of SoC and SoH over ``dt`` seconds.

    A resulting SoC outside [0, 1] is returned with ``out_of_bounds`` set;
    enforcing the operating window is the caller's job.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    q_cap = params.capacity(state.soh if soh_feedback else None)
    sigma = severity(min(max(state.soc, 0.0), 1.0), i_b, params, fidelity)
    soc = state.soc - dt * i_b / q_cap
    soh = min(state.soh + dt * sigma * abs(i_b) / (params.n_cycles * params.q_nom), 1.0)
    return BatteryState(soc, soh, out_of_bounds=not 0.0 <= soc <= 1.0)


# -------------------------------------------------------------------- EGU ---

def fuel_power(p_r, params: EguParams, fidelity: Fidelity = Fidelity.M1):
    """Fuel power [W] and mass flow [g/s] for generated power ``p_r``.

    Injection is active only for strictly positive ``p_r``, so the idle
    term is charged only when the engine is on.
    """
    p = np.asarray(p_r, dtype=float)
    if np.any(p < 0) or np.any(p > params.p_max * (1 + 1e-12)):
        raise ValueError("generated power outside [0, P_r_max]")
    p_f = np.where(p > ENGINE_ON_TOL, params.fuel_power_on(p, fidelity), 0.0)
    mdot = p_f / params.lhv
    if p_f.ndim == 0:
        return float(p_f), float(mdot)
    return p_f, mdot


def _fuel_power_unchecked(p_r, params: EguParams, fidelity: Fidelity):
    p = np.asarray(p_r, dtype=float)
    return np.where(p > ENGINE_ON_TOL, params.fuel_power_on(np.maximum(p, 0.0), fidelity), 0.0)


# ------------------------------------------------------------ input bounds --

@dataclass(frozen=True)
class InputBounds:
    u_min: float
    u_max: float
    p_min: float
    p_max: float


def power_bounds(p_m, v_oc, bparams: BatteryParams, eparams: EguParams):
    """Battery power window compatible with the motor demand."""
    p_lo = np.maximum(bparams.p_min, p_m - eparams.p_max)
    p_hi = np.minimum(np.minimum(bparams.p_max, p_m - eparams.p_min),
                      v_oc * v_oc / (4.0 * bparams.resistance))
    return p_lo, p_hi


def input_bounds(p_m: float, q_b: float, bparams: BatteryParams, eparams: EguParams,
                 fidelity: Fidelity = Fidelity.M1) -> InputBounds:
    """Admissible battery current interval for one sample.

    Raises :class:`InfeasibleDemand` when the power window is empty.
    """
    v = ocv(q_b, bparams, fidelity)
    p_lo, p_hi = power_bounds(p_m, v, bparams, eparams)
    if p_lo > p_hi:
        raise InfeasibleDemand(
            f"P_m={p_m:.1f} W needs battery power in [{p_lo:.1f}, {p_hi:.1f}] W")
    r = bparams.resistance
    return InputBounds(current_for_power(p_lo, v, r), current_for_power(p_hi, v, r),
                       float(p_lo), float(p_hi))


def current_bounds_array(p_m: float, v_oc: np.ndarray, bparams: BatteryParams,
                         eparams: EguParams):
    """Vectorised current bounds over an array of OCVs; NaN-free, may have lo > hi."""
    p_lo, p_hi = power_bounds(p_m, v_oc, bparams, eparams)
    r = bparams.resistance
    return current_for_power(p_lo, v_oc, r), current_for_power(p_hi, v_oc, r), p_lo <= p_hi


def max_demand(bparams: BatteryParams, eparams: EguParams, v_oc: float) -> float:
    """Largest motor power the powertrain can deliver at this OCV."""
    return min(bparams.p_max, v_oc * v_oc / (4 * bparams.resistance)) + eparams.p_max


def fuel_grams_to_litres(grams: float, eparams: EguParams) -> float:
    return grams / 1000.0 / eparams.fuel_density


__all__ = [
    "Fidelity", "InfeasibleDemand", "BatteryParams", "EguParams", "BatteryState",
    "ocv", "battery_power", "current_for_power", "severity", "battery_step",
    "fuel_power", "input_bounds", "InputBounds", "ENGINE_ON_TOL",
]
