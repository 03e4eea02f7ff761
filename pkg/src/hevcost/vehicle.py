"""Backward-facing longitudinal model: speed trace -> motor electrical power.

Resistances are written as a positive opposing force

    F_res = M g sin(theta) + C_r M g cos(theta) + C_v v + 0.5 rho A C_x v^2

so that the wheel must supply T_w / R_w = M dv/dt + F_res + F_b.  The
transmission and motor apply their efficiencies in the direction of the
power flow (divide when motoring, multiply when regenerating).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cycle import DrivingCycle
from .maps import Table2D

GRAVITY = 9.81


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1500.0
    wheel_radius: float = 0.3
    roll_coeff: float = 0.008
    viscous_coeff: float = 0.0
    drag_coeff: float = 0.22
    frontal_area: float = 2.0
    air_density: float = 1.18
    gravity: float = GRAVITY
    gear_ratio: float = 3.5
    trans_efficiency: float = 0.98
    # eta_m(omega_m [rad/s], |T_m| [Nm]); constant fallback when None
    motor_eff_map: Table2D | None = None
    motor_eff_const: float = 0.90

    def __post_init__(self):
        for name in ("mass", "wheel_radius", "frontal_area", "air_density", "gear_ratio"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.trans_efficiency <= 1:
            raise ValueError("transmission efficiency must lie in (0, 1]")
        if not 0 < self.motor_eff_const <= 1:
            raise ValueError("motor efficiency must lie in (0, 1]")
        if self.motor_eff_map is not None and (
                np.any(self.motor_eff_map.z <= 0) or np.any(self.motor_eff_map.z > 1)):
            raise ValueError("motor efficiency map values must lie in (0, 1]")

    def motor_efficiency(self, omega_m, torque_m):
        if self.motor_eff_map is None:
            return np.full(np.shape(omega_m), self.motor_eff_const)
        return np.asarray(self.motor_eff_map(omega_m, np.abs(torque_m)))


@dataclass(frozen=True)
class PowerDemandTrace:
    t: np.ndarray
    p_m: np.ndarray        # motor electrical power [W]
    f_b: np.ndarray        # friction brake force [N]
    wheel_power: np.ndarray  # power required at the wheel [W]
    name: str = "demand"

    @property
    def ts(self) -> float:
        # a lone sample has no spacing; one second is assumed
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 1.0

    def __len__(self) -> int:
        return self.t.size

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "P_m_W", "F_b_N"])
            for row in zip(self.t, self.p_m, self.f_b):
                w.writerow([repr(float(x)) for x in row])


def acceleration(cycle: DrivingCycle) -> np.ndarray:
    """Forward difference; the last sample repeats the previous slope."""
    v = cycle.speed
    if v.size < 2:
        return np.zeros_like(v)
    a = np.diff(v) / cycle.ts
    return np.append(a, a[-1])


def demand_from_cycle(cycle: DrivingCycle, params: VehicleParams | None = None,
                      regen_limit: float = -50e3) -> PowerDemandTrace:
    """Motor electrical power needed to follow ``cycle``.

    Regenerative power below ``regen_limit`` (a non-positive number) is
    clipped; the remaining braking power goes to the friction brake.
    """
    p = params or VehicleParams()
    if regen_limit > 0:
        raise ValueError("regen_limit must be non-positive")
    v, th = cycle.speed, cycle.slope
    accel = acceleration(cycle)
    mg = p.mass * p.gravity
    f_res = (mg * np.sin(th) + p.roll_coeff * mg * np.cos(th) + p.viscous_coeff * v
             + 0.5 * p.air_density * p.frontal_area * p.drag_coeff * v * v)
    f_wheel = p.mass * accel + f_res
    t_w = f_wheel * p.wheel_radius
    omega_w = v / p.wheel_radius
    wheel_power = t_w * omega_w

    # power-flow direction decides which way the efficiencies apply
    t_m = np.where(t_w >= 0, t_w / p.trans_efficiency, t_w * p.trans_efficiency) / p.gear_ratio
    omega_m = p.gear_ratio * omega_w
    p_mech = t_m * omega_m
    eta_m = p.motor_efficiency(omega_m, t_m)
    p_m = np.where(p_mech >= 0, p_mech / eta_m, p_mech * eta_m)

    f_b = np.zeros_like(v)
    clip = p_m < regen_limit
    if np.any(clip):
        # regen capped: find the motor torque that yields regen_limit, brake the rest
        pm_c = np.full(np.count_nonzero(clip), float(regen_limit))
        om = omega_m[clip]
        eta = eta_m[clip]
        for _ in range(50):
            tq = pm_c / eta / om
            eta_new = p.motor_efficiency(om, tq)
            if np.allclose(eta_new, eta, rtol=0, atol=1e-14):
                break
            eta = eta_new
        t_m_c = pm_c / eta / om
        t_w_c = t_m_c * p.gear_ratio / p.trans_efficiency
        f_b[clip] = (t_w_c - t_w[clip]) / p.wheel_radius
        p_m = p_m.copy()
        p_m[clip] = pm_c
    return PowerDemandTrace(cycle.t.copy(), p_m, f_b, wheel_power, name=cycle.name)


def delivered_wheel_power(trace: PowerDemandTrace, cycle: DrivingCycle,
                          params: VehicleParams | None = None) -> np.ndarray:
    """Wheel power reconstructed from P_m through the motor and transmission."""
    p = params or VehicleParams()
    omega_m = p.gear_ratio * cycle.speed / p.wheel_radius
    pm = trace.p_m
    # invert P_el -> P_mech; eta depends on torque so iterate when a map is set
    p_mech = np.where(pm >= 0, pm * p.motor_eff_const, pm / p.motor_eff_const)
    if p.motor_eff_map is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            for _ in range(50):
                tq = np.where(omega_m > 0, p_mech / omega_m, 0.0)
                eta = p.motor_efficiency(omega_m, tq)
                p_mech = np.where(pm >= 0, pm * eta, pm / eta)
    return np.where(p_mech >= 0, p_mech * p.trans_efficiency, p_mech / p.trans_efficiency)
