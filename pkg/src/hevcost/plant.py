"""Forward plant simulation shared by the DP trace and the causal policies.

A controller chooses the generator power set-point for each sample; the
battery covers the rest of the motor demand.  The plant always uses the full
model (affine OCV, severity map, efficiency map) and enforces the operating
limits itself:

* battery power and the SoC window cap the current; when the battery cannot
  take the shortfall the generator is pushed up, and when it cannot absorb
  surplus regeneration the generator is switched off and the excess goes to
  the friction brake;
* a demand that even full generator power cannot meet raises
  :class:`InfeasibleDemand`.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .ocp import CostCoefficients, RunResult, money_rate
from .params import PowertrainParams
from .powertrain import (
    ENGINE_ON_TOL, Fidelity, InfeasibleDemand, _fuel_power_unchecked, current_for_power,
    severity,
)
from .vehicle import PowerDemandTrace

PLANT = Fidelity.M1
# SoC values within this distance of a bound are snapped onto it
_SOC_SNAP = 1e-12

# controller(k, q_b, xi_b) -> requested generator power [W]
Controller = Callable[[int, float, float], float]


def _pb(i: float, v: float, r: float) -> float:
    return (v - r * i) * i


def _battery_window(q: float, v: float, dt: float, params: PowertrainParams,
                    q_cap: float) -> tuple[float, float]:
    """Battery power interval that keeps the next SoC inside the box."""
    b = params.battery
    r = b.resistance
    vertex_i = v / (2 * r)
    i_hi = (q - b.q_min) * q_cap / dt      # largest current before hitting q_min
    i_lo = (q - b.q_max) * q_cap / dt      # most negative current before hitting q_max
    p_hi = min(b.p_max, v * v / (4 * r), _pb(min(i_hi, vertex_i), v, r))
    p_lo = max(b.p_min, _pb(i_lo, v, r))
    return p_lo, p_hi


def simulate(demand: PowerDemandTrace, controller: Controller, params: PowertrainParams,
             coeffs: CostCoefficients | None = None, q0: float | None = None,
             label: str = "run", costate: np.ndarray | None = None,
             soh_feedback: bool = False) -> RunResult:
    """Run ``controller`` in closed loop over ``demand`` on the full model.

    With ``soh_feedback`` the capacity fades with the running SoH instead of
    staying at its mission-start value.
    """
    coeffs = coeffs or params.costs
    b, e = params.battery, params.egu
    dt = demand.ts
    n = len(demand)
    q = np.empty(n + 1)
    xi = np.empty(n + 1)
    q[0] = params.q0 if q0 is None else q0
    xi[0] = b.soh_initial
    out = {k: np.zeros(n) for k in ("i_b", "p_r", "p_b", "p_brake", "fuel", "cost", "v")}
    q_cap = b.capacity()
    r = b.resistance
    fuel_cum = cost_cum = 0.0
    for k in range(n):
        pm = float(demand.p_m[k])
        qk = float(q[k])
        v = b.ocv_slope * qk + b.ocv_offset
        if soh_feedback:
            q_cap = b.capacity(float(xi[k]))
        p_lo, p_hi = _battery_window(qk, v, dt, params, q_cap)
        pr = min(max(float(controller(k, qk, float(xi[k]))), 0.0), e.p_max)
        if pr <= ENGINE_ON_TOL:
            pr = 0.0
        pbk = pm - pr
        brake = 0.0
        if pbk > p_hi:
            pr = pm - p_hi
            if pr > e.p_max * (1 + 1e-12):
                raise InfeasibleDemand(
                    f"step {k}: P_m={pm:.1f} W exceeds battery ({p_hi:.1f} W) plus generator")
            pbk = p_hi
        elif pbk < p_lo:
            pr = max(pm - p_lo, 0.0)
            pbk = p_lo
            brake = pr + pbk - pm
        if 0.0 < pr <= ENGINE_ON_TOL:
            # a sliver of generator power is not worth starting the engine for
            pbk += pr
            pr = 0.0
        i = float(current_for_power(pbk, v, r))
        if math.isnan(i):
            raise InfeasibleDemand(f"step {k}: battery power {pbk:.1f} W beyond the circuit limit")
        # money and fuel for this step
        p_f = float(_fuel_power_unchecked(pr, e, PLANT))
        fuel_cum += dt * p_f / e.lhv
        cost_cum += dt * float(money_rate(qk, i, pr, coeffs, b, e, PLANT))
        sigma = float(severity(qk, i, b, PLANT))
        q_next = qk - dt * i / q_cap
        if b.q_min - _SOC_SNAP < q_next < b.q_min:
            q_next = b.q_min
        elif b.q_max < q_next < b.q_max + _SOC_SNAP:
            q_next = b.q_max
        q[k + 1] = q_next
        xi[k + 1] = min(xi[k] + dt * sigma * abs(i) / (b.n_cycles * b.q_nom), 1.0)
        out["i_b"][k], out["p_r"][k], out["p_b"][k] = i, pr, pbk
        out["p_brake"][k], out["fuel"][k], out["cost"][k], out["v"][k] = brake, fuel_cum, cost_cum, v
    return RunResult(
        t=demand.t.copy(), p_m=np.asarray(demand.p_m, dtype=float).copy(), q=q, xi=xi,
        i_b=out["i_b"], p_r=out["p_r"], p_b=out["p_b"], p_brake=out["p_brake"],
        fuel_cum=out["fuel"], cost_cum=out["cost"], v_oc=out["v"], label=label,
        costate=costate, meta={"R_b": r, "ts": dt})


def current_controller(currents: np.ndarray, demand: PowerDemandTrace,
                       params: PowertrainParams, fidelity: Fidelity) -> Controller:
    """Replay a current sequence planned on ``fidelity`` as generator set-points."""
    b = params.battery

    def ctrl(k: int, q: float, xi: float) -> float:
        v = b.v_nom if fidelity is Fidelity.M2 else b.ocv_slope * q + b.ocv_offset
        return float(demand.p_m[k]) - _pb(float(currents[k]), v, b.resistance)

    return ctrl
