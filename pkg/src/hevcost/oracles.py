"""Brute-force references used to check the solvers.

Nothing here is fast.  Each function trades speed for an implementation
simple enough to trust by inspection:

* :func:`enumerate_dp` tries every current sequence of a tiny problem;
* :func:`hamiltonian_grid_argmin` scans the simplified Hamiltonian on a
  fixed current lattice;
* :func:`toy_instance` builds small problems whose SoC transitions land
  exactly on grid nodes, so that DP and enumeration must agree bit for bit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .dp import SENTINEL, DpGridSpec, soc_grid
from .ocp import CostCoefficients, OcpSpec, Strategy, Terminal, stage_cost
from .params import PowertrainParams
from .powertrain import (
    ENGINE_ON_TOL, BatteryParams, EguParams, Fidelity, InfeasibleDemand, current_for_power,
    input_bounds, severity,
)
from .vehicle import PowerDemandTrace


@dataclass(frozen=True)
class ToyInstance:
    spec: OcpSpec
    demand: PowerDemandTrace
    coeffs: CostCoefficients
    params: PowertrainParams
    grid: DpGridSpec


def _trace(p_m: np.ndarray) -> PowerDemandTrace:
    n = p_m.size
    t = np.arange(n, dtype=float)
    return PowerDemandTrace(t, p_m.astype(float), np.zeros(n), p_m.astype(float), name="toy")


def toy_instance(rng: np.random.Generator, max_steps: int = 4, max_nodes: int = 5,
                 max_currents: int = 5, two_state: bool = False) -> ToyInstance:
    """A random problem small enough to enumerate.

    Capacity, grid step and currents are powers of two so that every
    transition is exact in floating point: ``q - i / Q`` lands on a node.

    With ``two_state`` the SoH becomes a second state: ``N_b = 2048`` makes
    every SoH increment a power of two that lands on a three-node SoH grid,
    the horizon is at most two steps and the terminal SoC is free.  The
    second step then sees a faded capacity, so its successor SoC is off the
    grid, but the terminal cost-to-go is identically zero there.
    """
    if two_state:
        max_steps = min(max_steps, 2)
    n_steps = int(rng.integers(1, max_steps + 1))
    n_nodes = int(rng.integers(3, max_nodes + 1))
    step = 0.125
    lo = 0.5 - step * int(rng.integers(0, n_nodes))
    lo = max(lo, 0.0)
    hi = lo + step * (n_nodes - 1)
    if hi > 1.0:
        lo, hi = 1.0 - step * (n_nodes - 1), 1.0
    q_cap = 1024.0
    unit = step * q_cap           # current that moves the SoC by one node in 1 s
    k_max = int(rng.integers(1, 3))
    pool = [unit * k for k in range(-k_max, k_max + 1)]
    n_cur = int(min(max_currents, len(pool), rng.integers(2, max_currents + 1)))
    others = [c for c in pool if c != 0.0]
    currents = sorted([0.0, *rng.choice(others, size=n_cur - 1, replace=False).tolist()])
    battery = BatteryParams(ocv_slope=float(rng.uniform(0, 80)), ocv_offset=320.0, v_nom=355.0,
                            resistance=0.01, q_nom=q_cap,
                            n_cycles=2048.0 if two_state else 2000.0, sigma_nominal=1.0,
                            p_min=-400e3, p_max=400e3, q_min=lo, q_max=hi)
    egu = EguParams(a_r=3.43, b_r=5610.0, p_max=200e3)
    params = PowertrainParams(battery=battery, egu=egu)
    coeffs = CostCoefficients.from_kwh(float(rng.uniform(0, 0.5)), float(rng.uniform(0, 800)),
                                       float(rng.uniform(0.01, 0.3)))
    nodes = soc_grid(lo, hi, step)
    q0 = float(nodes[int(rng.integers(0, nodes.size))])
    pool = [Strategy.TCMS, Strategy.FE] if two_state else list(Strategy)
    strategy = pool[int(rng.integers(0, len(pool)))]
    zeta = float(rng.uniform(-2000, 2000)) if strategy is Strategy.ECMS else None
    spec = OcpSpec(strategy, q0=q0, q_bounds=(lo, hi), fidelity=Fidelity.M1, zeta=zeta,
                   soh_as_state=two_state)
    demand = _trace(rng.uniform(-30e3, 100e3, n_steps))
    # SoH grid step = increment of one current unit held for one second
    xi_unit = unit / (battery.n_cycles * q_cap)
    grid = DpGridSpec(soc_step=step, currents=tuple(currents), terminal_band_steps=0,
                      xi_points=3, xi_span=2 * xi_unit)
    return ToyInstance(spec, demand, coeffs, params, grid)


def _terminal(spec: OcpSpec, q: float, coeffs: CostCoefficients, band: float) -> float:
    if spec.terminal is Terminal.FREE:
        return 0.0
    if spec.terminal is Terminal.LINEAR_PENALTY:
        return spec.zeta_value(coeffs) * (q - spec.q0)
    return 0.0 if abs(q - spec.q0) <= band + 1e-12 else math.inf


def enumerate_dp(spec: OcpSpec, demand: PowerDemandTrace, coeffs: CostCoefficients,
                 params: PowertrainParams, currents, band: float = 0.0,
                 soh_feedback: bool = False) -> tuple[float, tuple[float, ...] | None]:
    """Cheapest admissible current sequence by exhaustive search.

    The sum is accumulated from the last stage backwards, in the same order
    as value iteration, so exact-arithmetic agreement is meaningful.  With
    ``soh_feedback`` the capacity fades with the SoH accumulated so far.
    Returns ``(inf, None)`` when no sequence is admissible.
    """
    b = params.battery
    lo, hi = spec.q_bounds
    xi_gain = demand.ts / (b.n_cycles * b.q_nom)
    best, arg = math.inf, None
    for seq in itertools.product(sorted(currents), repeat=len(demand)):
        q = spec.q0
        xi = b.soh_initial
        stages = []
        for k, i in enumerate(seq):
            pm = float(demand.p_m[k])
            try:
                bnd = input_bounds(pm, q, b, params.egu, spec.fidelity)
            except InfeasibleDemand:
                break
            tol = 1e-12 * max(1.0, abs(bnd.u_min), abs(bnd.u_max))
            if not bnd.u_min - tol <= i <= bnd.u_max + tol:
                break
            q_cap = b.q_nom * (1.0 - 0.2 * xi) if soh_feedback else b.capacity()
            qn = q - demand.ts / q_cap * i
            if not lo - 1e-12 <= qn <= hi + 1e-12:
                break
            stages.append(stage_cost(spec.strategy, q, i, pm, coeffs, params, demand.ts,
                                     spec.fidelity))
            xi = xi + xi_gain * float(severity(q, i, b, spec.fidelity)) * abs(i)
            q = qn
        else:
            total = _terminal(spec, q, coeffs, band)
            for g in reversed(stages):
                total = g + total
            if total < best or (total == best and arg is not None
                                and sum(map(abs, seq)) < sum(map(abs, arg))):
                best, arg = total, seq
    return best, arg


def simplified_hamiltonian(i, p: float, p_m: float, coeffs: CostCoefficients,
                           params: PowertrainParams) -> np.ndarray:
    """Simplified-model Hamiltonian written out directly from its definition.

    Independent of :mod:`hevcost.pmp`; ``inf`` marks currents that would
    drive the generator backwards.
    """
    b, e = params.battery, params.egu
    i = np.asarray(i, dtype=float)
    v = b.v_nom
    p_r = p_m - (v - b.resistance * i) * i
    fuel = np.where(p_r > ENGINE_ON_TOL, e.a_r * p_r + e.b_r, 0.0)
    h = (coeffs.alpha / coeffs.eta_grid * v * i
         + coeffs.beta * b.sigma_nominal * v * np.abs(i) / b.n_cycles
         + coeffs.gamma * fuel - p * i / b.capacity())
    return np.where(p_r < -1e-9 * max(1.0, abs(p_m)), np.inf, h)


def hamiltonian_grid_argmin(p_m: float, p: float, coeffs: CostCoefficients,
                            params: PowertrainParams, step: float = 0.01) -> float:
    """Argmin of the simplified Hamiltonian over a lattice of spacing ``step``.

    The lattice is anchored at zero and clipped to the admissible interval;
    the bounds themselves and the engine-off current are added because the
    engine-off set is a single point a lattice would almost surely miss.
    """
    b = params.battery
    bnd = input_bounds(p_m, 0.5, b, params.egu, Fidelity.M2)
    lo, hi = bnd.u_min, bnd.u_max
    k0, k1 = math.ceil(lo / step), math.floor(hi / step)
    pts = [np.arange(k0, k1 + 1) * step, [lo, hi]]
    i_off = current_for_power(p_m, b.v_nom, b.resistance)
    if not math.isnan(i_off) and lo <= i_off <= hi:
        pts.append([i_off])
    grid = np.concatenate(pts)
    h = simplified_hamiltonian(grid, p, p_m, coeffs, params)
    best = np.flatnonzero(h == h.min())
    return float(grid[best[np.argmin(np.abs(grid[best]))]])


def m2_equivalent(params: PowertrainParams) -> PowertrainParams:
    """Full-model parameters that collapse onto the simplified model."""
    b = replace(params.battery, ocv_slope=0.0, ocv_offset=params.battery.v_nom, sigma_map=None)
    e = replace(params.egu, eta_map=None)
    return replace(params, battery=b, egu=e)


@dataclass(frozen=True)
class PolynomialMaps:
    """Smooth severity and efficiency maps with known derivatives.

    ``sigma(q, i) = s0 + s1 q + s2 q^2 + s3 q^3 + c |i|`` and
    ``eta(P) = e0 + e1 P + e2 P^2`` (valid where it stays in (0, 1]).
    """

    s: tuple[float, float, float, float] = (1.0, 0.5, 0.8, 0.3)
    c: float = 2e-3
    e: tuple[float, float, float] = (0.22, 6e-6, -1.2e-10)

    def sigma(self, q, i):
        q = np.asarray(q, dtype=float)
        s0, s1, s2, s3 = self.s
        return s0 + s1 * q + s2 * q * q + s3 * q ** 3 + self.c * np.abs(i)

    def dsigma_dq(self, q: float) -> float:
        _, s1, s2, s3 = self.s
        return s1 + 2 * s2 * q + 3 * s3 * q * q

    def eta(self, p):
        p = np.asarray(p, dtype=float)
        e0, e1, e2 = self.e
        return e0 + e1 * p + e2 * p * p

    def dfuel_dq(self, q: float, i: float, p_m: float, battery: BatteryParams) -> float:
        """Chain rule through ``P_f = P_r / eta(P_r)`` and ``P_r = P_m - (A q + B - R i) i``."""
        e0, e1, e2 = self.e
        p_r = p_m - (battery.ocv_slope * q + battery.ocv_offset - battery.resistance * i) * i
        eta = e0 + e1 * p_r + e2 * p_r * p_r
        deta = e1 + 2 * e2 * p_r
        dpf_dpr = (eta - p_r * deta) / (eta * eta)
        return dpf_dpr * (-battery.ocv_slope * i)

    def apply(self, params: PowertrainParams) -> PowertrainParams:
        return replace(params, battery=replace(params.battery, sigma_map=self.sigma),
                       egu=replace(params.egu, eta_map=self.eta))


def dp_matches_enumeration(inst: ToyInstance) -> tuple[float, float]:
    """``(dp_cost, enumerated_cost)`` for one toy instance; ``inf`` if infeasible."""
    from .dp import DpInfeasible, dp_solve
    ref, _ = enumerate_dp(inst.spec, inst.demand, inst.coeffs, inst.params,
                          inst.grid.currents, band=inst.grid.terminal_band_steps * inst.grid.soc_step,
                          soh_feedback=inst.spec.soh_as_state)
    try:
        sol = dp_solve(inst.spec, inst.demand, inst.coeffs, inst.params, inst.grid)
    except DpInfeasible:
        return math.inf, ref
    j0 = sol.j0
    return (math.inf if j0 >= SENTINEL else j0), ref


__all__ = [
    "ToyInstance", "toy_instance", "enumerate_dp", "simplified_hamiltonian",
    "hamiltonian_grid_argmin", "m2_equivalent", "dp_matches_enumeration", "PolynomialMaps",
]
