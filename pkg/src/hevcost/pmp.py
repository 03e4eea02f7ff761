"""Causal policies from the minimum principle.

The Hamiltonian of the money-cost problem is

    H(q, i, p) = alpha v_nom i / eta_grid + beta sigma v_nom |i| / N_b
                 + gamma P_f(P_m - P_b(i, q)) - p i / Q_b

with the engine off (``P_f = 0``) exactly when the battery covers the whole
demand.  Under the simplified model (constant OCV and severity, affine fuel
power) its minimiser has a closed form with five regimes:

1. hybrid charging    ``i < 0``, engine on
2. engine only        ``i = 0``
3. hybrid discharging ``i > 0``, engine on
4. pure electric      ``P_b = P_m >= 0``
5. pure regeneration  ``P_b = P_m < 0``

Regimes 1-3 are selected by the costate ``p`` against two thresholds; each
competes with the engine-off regime through a motor-power limit.  With input
bounds three saturated regimes join them.  For the full model the
Hamiltonian is minimised numerically.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .ocp import CostCoefficients, RunResult
from .params import PowertrainParams
from .plant import simulate
from .powertrain import (
    ENGINE_ON_TOL, Fidelity, InfeasibleDemand, current_for_power, input_bounds, ocv, severity,
)
from .vehicle import PowerDemandTrace

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class Region(enum.IntEnum):
    MODE1_HYBRID_CHARGE = 1
    MODE2_ENGINE_ONLY = 2
    MODE3_HYBRID_DISCHARGE = 3
    MODE4_PURE_ELECTRIC = 4
    MODE5_REGEN = 5
    SAT_PB_MIN = 6
    SAT_PB_MAX = 7
    SAT_PR_MAX = 8


@dataclass(frozen=True)
class PmpRegionDecision:
    region: Region
    i_opt: float
    hamiltonian_value: float


class AdjointMode(enum.Enum):
    CONSTANT_ZERO = "constant_zero"
    CONSTANT_VALUE = "constant_value"
    INTEGRATED = "integrated"


@dataclass(frozen=True)
class AdjointState:
    p: float = 0.0
    mode: AdjointMode = AdjointMode.CONSTANT_ZERO

    def __post_init__(self):
        if self.mode is AdjointMode.CONSTANT_ZERO and self.p != 0.0:
            raise ValueError("constant_zero mode requires p == 0")


# ------------------------------------------------------------ Hamiltonian ---

def _fuel_on(p_r, params: PowertrainParams, fidelity: Fidelity):
    return params.egu.fuel_power_on(p_r, fidelity)


def hamiltonian_array(i, q_b: float, p: float, p_m: float, coeffs: CostCoefficients,
                      params: PowertrainParams, fidelity: Fidelity) -> np.ndarray:
    """Vectorised H over currents; ``inf`` where the generator would run backwards."""
    b = params.battery
    i = np.asarray(i, dtype=float)
    v = ocv(q_b, b, fidelity)
    p_r = p_m - (v - b.resistance * i) * i
    on = p_r > ENGINE_ON_TOL
    p_f = np.where(on, _fuel_on(np.maximum(p_r, 0.0), params, fidelity), 0.0)
    sigma = severity(q_b, i, b, fidelity)
    alpha_v = coeffs.alpha * b.v_nom / coeffs.eta_grid
    beta_v_n = coeffs.beta * b.v_nom / b.n_cycles
    h = alpha_v * i + beta_v_n * sigma * np.abs(i) + coeffs.gamma * p_f - p * i / b.capacity()
    slack = 1e-9 * max(abs(p_m), 1.0)
    return np.where(p_r < -slack, np.inf, h)


def hamiltonian(q_b: float, i_b: float, p: float, p_m: float, coeffs: CostCoefficients,
                params: PowertrainParams, fidelity: Fidelity = Fidelity.M1) -> float:
    """H [EUR/s] at one operating point; raises if ``i_b`` needs negative generator power.

    Under the simplified model the value comes from the branch ``H_1 .. H_5``
    matching the sign of ``i_b`` and the engine state.
    """
    h = float(hamiltonian_array(i_b, q_b, p, p_m, coeffs, params, fidelity))
    if math.isinf(h):
        raise InfeasibleDemand(f"i_b={i_b} A needs negative generator power at P_m={p_m} W")
    if fidelity is Fidelity.M2:
        s = _Simplified.of(coeffs, params)
        if p_m - s.pb(i_b) <= ENGINE_ON_TOL:
            mode = 4 if p_m >= 0 else 5
        else:
            mode = 1 if i_b < 0 else (2 if i_b == 0 else 3)
        return s.h(mode, i_b, p, p_m)
    return h


@dataclass(frozen=True)
class _Simplified:
    """Constants of the simplified-model Hamiltonian, per ampere of current."""

    v: float
    r: float
    q_cap: float
    a_r: float
    b_r: float
    grid: float    # alpha v / eta_grid
    wear: float    # beta sigma v / N_b
    fuel: float    # gamma
    alpha: float
    beta: float
    sigma: float
    n_b: float

    @classmethod
    def of(cls, coeffs: CostCoefficients, params: PowertrainParams) -> "_Simplified":
        b, e = params.battery, params.egu
        return cls(v=b.v_nom, r=b.resistance, q_cap=b.capacity(), a_r=e.a_r, b_r=e.b_r,
                   grid=coeffs.alpha * b.v_nom / coeffs.eta_grid,
                   wear=coeffs.beta * b.sigma_nominal * b.v_nom / b.n_cycles,
                   fuel=coeffs.gamma, alpha=coeffs.alpha / coeffs.eta_grid, beta=coeffs.beta,
                   sigma=b.sigma_nominal, n_b=b.n_cycles)

    @property
    def curvature(self) -> float:
        return self.fuel * self.a_r * self.r

    def slopes(self, p: float) -> tuple[float, float]:
        """dH/di just left (k1) and right (k3) of zero, without the fuel term's v."""
        base = self.grid - p / self.q_cap - self.fuel * self.a_r * self.v
        return base - self.wear, base + self.wear

    def pb(self, i: float) -> float:
        return (self.v - self.r * i) * i

    def pb_capped(self, i: float) -> float:
        return self.pb(min(i, self.v / (2.0 * self.r)))

    def h(self, mode: int, i: float, p: float, p_m: float) -> float:
        """The five displayed Hamiltonian branches."""
        if mode == 2:
            return self.fuel * (self.a_r * p_m + self.b_r)
        s = -1.0 if mode in (1, 5) else 1.0
        h = self.grid * i + s * self.wear * i - p * i / self.q_cap
        if mode in (1, 3):
            h += self.fuel * (self.a_r * (p_m - i * self.v + self.r * i * i) + self.b_r)
        return h


def hamiltonian_mode(mode: int, i_b: float, p: float, p_m: float, coeffs: CostCoefficients,
                     params: PowertrainParams) -> float:
    """One branch ``H_mode`` of the simplified-model Hamiltonian (mode 1..5)."""
    if mode not in (1, 2, 3, 4, 5):
        raise ValueError("mode must be 1..5")
    return _Simplified.of(coeffs, params).h(mode, i_b, p, p_m)


# ----------------------------------------------------- thresholds & limits --

def costate_limits(coeffs: CostCoefficients, params: PowertrainParams) -> tuple[float, float]:
    """Costate values separating charging / engine-only / discharging."""
    s = _Simplified.of(coeffs, params)
    base = s.q_cap * (s.grid - s.a_r * s.fuel * s.v)
    return base - s.q_cap * s.wear, base + s.q_cap * s.wear


def saturation_costates(coeffs: CostCoefficients, params: PowertrainParams) -> tuple[float, float]:
    """Costates at which the branch optima hit the battery-power limits.

    Below the first value the charging optimum is clipped at ``P_b_min``;
    above the second the discharging optimum is clipped at ``P_b_max``.
    Each branch optimum is affine in ``p``, so the crossing is found by
    inverting it at the saturated current.
    """
    s = _Simplified.of(coeffs, params)
    b = params.battery
    i_lo = current_for_power(b.p_min, s.v, s.r)
    i_hi = current_for_power(min(b.p_max, s.v * s.v / (4 * s.r)), s.v, s.r)
    base = s.grid - s.fuel * s.a_r * s.v
    return (s.q_cap * (base - s.wear + 2 * s.curvature * i_lo),
            s.q_cap * (base + s.wear + 2 * s.curvature * i_hi))


def branch_currents(p: float, coeffs: CostCoefficients, params: PowertrainParams):
    """Unconstrained stationary currents of the two engine-on branches."""
    s = _Simplified.of(coeffs, params)
    k1, k3 = s.slopes(p)
    return -k1 / (2 * s.curvature), -k3 / (2 * s.curvature)


def power_limits(p: float, coeffs: CostCoefficients, params: PowertrainParams) -> dict:
    """Motor-power limits above which the engine-on branch beats engine-off.

    Each limit is the battery power at the current where the two competing
    Hamiltonians are equal; of the two roots of that quadratic, the one
    bounding the feasible engine-on side is taken.  Keys are ``(1, 4)``,
    ``(2, 4)``, ``(3, 4)`` and ``(1, 5)``.  ``-inf`` means the engine-on
    branch always wins.
    """
    s = _Simplified.of(coeffs, params)
    k1, k3 = s.slopes(p)
    c2 = s.curvature
    cb = s.fuel * s.fuel * s.a_r * s.b_r * s.r
    delta = math.sqrt(s.b_r / (s.a_r * s.r))
    i1, i3 = -k1 / (2 * c2), -k3 / (2 * c2)
    out = {}
    disc14 = k3 * k3 - k1 * k1 + 4 * cb
    out[(1, 4)] = (s.pb_capped((-k3 + math.sqrt(disc14)) / (2 * c2)) if disc14 >= 0
                   else -math.inf)
    out[(2, 4)] = s.pb_capped((-k3 + math.sqrt(k3 * k3 + 4 * cb)) / (2 * c2))
    out[(3, 4)] = s.pb_capped(i3 + delta)
    out[(1, 5)] = s.pb_capped(i1 + delta)
    return out


def psi_terms(p: float, coeffs: CostCoefficients, params: PowertrainParams) -> dict[int, float]:
    """The fourteen intermediate expressions of the closed-form power limits.

    Square roots of negative arguments give NaN.
    """
    s = _Simplified.of(coeffs, params)
    a, b, c, sg = s.alpha, s.beta, s.fuel, s.sigma
    ar, br, r, v, q, n = s.a_r, s.b_r, s.r, s.v, s.q_cap, s.n_b

    def root(x):
        return math.sqrt(x) if x >= 0 else math.nan

    ps = {}
    ps[1] = root(q * sg * a * b * v**2 - sg * b * p * v + ar * br * n * q * r * c**2
                 - ar * q * sg * b * c * v**2)
    ps[2] = 4 * ar**2 * n**2 * q**2 * r * c**2
    sq = math.sqrt(ar * br * r)
    ps[3] = 4 * sq * n**2 * q**2 * a * c * v
    ps[4] = 4 * sq * n * q**2 * sg * b * c * v
    ps[5] = 4 * sq * n**2 * q * c * p
    ps[7] = n**2 * q**2 * a**2 * v**2
    ps[8] = q**2 * sg**2 * b**2 * v**2
    ps[9] = ar**2 * n**2 * q**2 * c**2 * v**2
    ps[10] = 4 * ar * br * n**2 * q**2 * r * c**2
    ps[11] = 2 * n**2 * q * a * p * v
    ps[12] = 2 * n * q**2 * sg * a * b * v**2
    ps[13] = n**2 * p**2
    ps[14] = 2 * n * q * sg * b * p * v
    ps[6] = root(ps[13] + ps[7] + ps[8] - ps[11] + ps[9] + ps[12] + ps[10] - ps[14]
                 - 2 * ar * n**2 * q**2 * a * c * v**2 + 2 * ar * n**2 * q * c * p * v
                 - 2 * ar * n * q**2 * sg * b * c * v**2)
    return dict(sorted(ps.items()))


def closed_form_power_limits(p: float, coeffs: CostCoefficients, params: PowertrainParams,
                             psi: dict[int, float] | None = None) -> dict:
    """Power limits assembled from :func:`psi_terms` exactly as printed.

    For ``(2, 4)`` and ``(3, 4)`` these coincide with :func:`power_limits`.
    The printed ``(1, 4)`` and ``(1, 5)`` forms take the other root of the
    same Hamiltonian-equality quadratic, so they still satisfy the equality
    but bound the infeasible side; :func:`power_limits` is what the law uses.
    """
    s = _Simplified.of(coeffs, params)
    a, b, c, sg = s.alpha, s.beta, s.fuel, s.sigma
    ar, br, r, v, q, n = s.a_r, s.b_r, s.r, s.v, s.q_cap, s.n_b
    P = psi if psi is not None else psi_terms(p, coeffs, params)
    lim14 = -(P[13] - 4 * n**1.5 * q**0.5 * p * P[1] + P[7] + P[8]
              + 4 * n**1.5 * q**1.5 * a * v * P[1] - P[11] - P[9]
              + 6 * n * q**2 * sg * a * b * v**2 + P[10] - 6 * n * q * sg * b * p * v
              + n**0.5 * q**1.5 * sg * b * v * P[1] * 4
              - 4 * ar * n * q**2 * sg * b * c * v**2) / P[2]
    lim24 = -(P[13] + n * p * P[6] + P[7] + P[8] - n * q * a * v * P[6]
              - q * sg * b * v * P[6] - P[11] + P[12] + 2 * ar * br * n**2 * q**2 * r * c**2
              - P[14] - ar * n**2 * q**2 * a * c * v**2 + ar * n**2 * q * c * p * v
              - ar * n * q**2 * sg * b * c * v**2) / (2 * ar**2 * n**2 * q**2 * r * c**2)
    lim34 = -(P[13] + P[7] + P[8] - P[11] - P[9] + P[12] + P[10] - P[14]
              + P[5] - P[3] - P[4]) / P[2]
    lim15 = -(P[13] + P[7] + P[8] - P[11] - P[9] - P[12] + P[10] + P[14]
              - P[5] + P[3] - P[4]) / P[2]
    return {(1, 4): lim14, (2, 4): lim24, (3, 4): lim34, (1, 5): lim15}


# ------------------------------------------------------------ explicit law --

def _electric_current(p_m: float, v: float, r: float) -> float:
    i = current_for_power(p_m, v, r)
    if math.isnan(i):
        raise InfeasibleDemand(f"P_m={p_m:.1f} W is beyond the battery parabola "
                               f"({v * v / (4 * r):.1f} W)")
    return float(i)


def explicit_law_unconstrained(p_m: float, p: float, coeffs: CostCoefficients,
                               params: PowertrainParams) -> PmpRegionDecision:
    """Closed-form minimiser of the simplified Hamiltonian, ignoring input bounds."""
    s = _Simplified.of(coeffs, params)
    p12, p23 = costate_limits(coeffs, params)
    lims = power_limits(p, coeffs, params)
    i1, i3 = branch_currents(p, coeffs, params)
    if p_m >= 0:
        if p < p12:
            mode, i, lim = 1, i1, lims[(1, 4)]
        elif p <= p23:
            mode, i, lim = 2, 0.0, lims[(2, 4)]
        else:
            mode, i, lim = 3, i3, lims[(3, 4)]
        if not p_m > lim:
            mode, i = 4, _electric_current(p_m, s.v, s.r)
    elif p < p12 and p_m > lims[(1, 5)]:
        mode, i = 1, i1
    else:
        mode, i = 5, _electric_current(p_m, s.v, s.r)
    if mode in (4, 5) and abs(p_m) <= ENGINE_ON_TOL:
        # every current between zero and the root leaves the engine off and H
        # is linear there, so the better endpoint wins (ties to zero)
        if s.h(mode, 0.0, p, p_m) <= s.h(mode, i, p, p_m):
            i = 0.0
    return PmpRegionDecision(Region(mode), i, s.h(mode, i, p, p_m))


def _on_branch_minimiser(p: float, coeffs: CostCoefficients, params: PowertrainParams):
    p12, p23 = costate_limits(coeffs, params)
    i1, i3 = branch_currents(p, coeffs, params)
    if p < p12:
        return i1, Region.MODE1_HYBRID_CHARGE
    if p <= p23:
        return 0.0, Region.MODE2_ENGINE_ONLY
    return i3, Region.MODE3_HYBRID_DISCHARGE


def _pick(cands, h_of):
    """Smallest H; exact ties go to the smaller |i|."""
    best = None
    for i, tag in cands:
        h = h_of(i)
        if best is None or h < best[1] or (h == best[1] and abs(i) < abs(best[0])):
            best = (i, h, tag)
    return best


def _lower_bound_region(p_m: float, params: PowertrainParams) -> Region:
    if params.battery.p_min >= p_m - params.egu.p_max:
        return Region.SAT_PB_MIN
    return Region.SAT_PR_MAX


def _label(i: float, tag: Region, p_m: float, v: float, bnd,
           params: PowertrainParams) -> Region:
    """Region of a chosen candidate, given where the candidate came from.

    A candidate whose generator power vanishes is engine-off whatever its
    origin.  When the admissible interval is a single point both limits are
    active; that point is labelled by the lower-bound rule so every law agrees.
    """
    if p_m - (v - params.battery.resistance * i) * i <= ENGINE_ON_TOL:
        return Region.MODE4_PURE_ELECTRIC if p_m >= 0 else Region.MODE5_REGEN
    if bnd.u_min == bnd.u_max:
        return _lower_bound_region(p_m, params)
    return tag


def explicit_law_constrained(p_m: float, p: float, coeffs: CostCoefficients,
                             params: PowertrainParams) -> PmpRegionDecision:
    """Explicit law with battery- and generator-power saturation."""
    b, e = params.battery, params.egu
    if p_m > b.p_max + e.p_max:
        raise InfeasibleDemand(f"P_m={p_m:.1f} W exceeds total capability")
    bnd = input_bounds(p_m, 0.5, b, e, Fidelity.M2)
    s = _Simplified.of(coeffs, params)
    free = explicit_law_unconstrained(p_m, p, coeffs, params)
    if bnd.u_min <= free.i_opt <= bnd.u_max:
        return free
    i_on, tag = _on_branch_minimiser(p, coeffs, params)
    if i_on > bnd.u_max:
        cands = [(bnd.u_max, Region.SAT_PB_MAX)]
    elif i_on < bnd.u_min:
        cands = [(bnd.u_min, _lower_bound_region(p_m, params))]
    else:
        cands = [(i_on, tag)]
    i4 = current_for_power(p_m, s.v, s.r)
    off = Region.MODE4_PURE_ELECTRIC if p_m >= 0 else Region.MODE5_REGEN
    if not math.isnan(i4) and bnd.u_min <= i4 <= bnd.u_max:
        cands.append((float(i4), off))

    def h_of(i):
        return float(hamiltonian_array(i, 0.5, p, p_m, coeffs, params, Fidelity.M2))

    i, h, tag = _pick(cands, h_of)
    return PmpRegionDecision(_label(i, tag, p_m, s.v, bnd, params), i, h)


# ---------------------------------------------------------- candidate set ---

def _golden(f, lo: float, hi: float, tol: float = 1e-9, max_iter: int = 200):
    """Golden-section minimiser of a unimodal function on the open interval."""
    if hi <= lo:
        return lo, f(lo)
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a), abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _classify(i: float, p_m: float, q_b: float, bnd, params: PowertrainParams,
              fidelity: Fidelity) -> Region:
    v = ocv(q_b, params.battery, fidelity)
    pr = p_m - (v - params.battery.resistance * i) * i
    if pr <= ENGINE_ON_TOL:
        return Region.MODE4_PURE_ELECTRIC if p_m >= 0 else Region.MODE5_REGEN
    if i == bnd.u_max:
        return Region.SAT_PB_MAX
    if i == bnd.u_min:
        return _lower_bound_region(p_m, params)
    if i < 0:
        return Region.MODE1_HYBRID_CHARGE
    if i == 0:
        return Region.MODE2_ENGINE_ONLY
    return Region.MODE3_HYBRID_DISCHARGE


def candidate_set_law(p_m: float, p: float, q_b: float, coeffs: CostCoefficients,
                      params: PowertrainParams,
                      fidelity: Fidelity = Fidelity.M2) -> PmpRegionDecision:
    """Minimise H over the branch optima, zero, the engine-off current and the bounds.

    Under the simplified model the branch optima are the closed-form
    stationary points; under the full model they are found by golden-section
    search on each side of zero.
    """
    b = params.battery
    bnd = input_bounds(p_m, q_b, b, params.egu, fidelity)
    lo, hi = bnd.u_min, bnd.u_max

    def h_of(i):
        return float(hamiltonian_array(i, q_b, p, p_m, coeffs, params, fidelity))

    v = ocv(q_b, b, fidelity)
    i4 = current_for_power(p_m, v, b.resistance)
    if fidelity is Fidelity.M2:
        i1, i3 = branch_currents(p, coeffs, params)
    else:
        i1 = _golden(h_of, lo, min(0.0, hi))[0] if lo < 0 else lo
        i3 = _golden(h_of, max(0.0, lo), hi)[0] if hi > 0 else hi
    off = Region.MODE4_PURE_ELECTRIC if p_m >= 0 else Region.MODE5_REGEN
    # a branch optimum on the wrong side of zero is not a stationary point of
    # its branch; zero and the bounds already cover that side
    # candidates sharing a current are labelled by the first one listed:
    # zero is the engine-only optimum only inside the costate deadband,
    # otherwise it is a clipped branch optimum and a coinciding bound names it
    zero = (0.0, Region.MODE2_ENGINE_ONLY)
    p12, p23 = costate_limits(coeffs, params)
    stationary_zero = fidelity is Fidelity.M1 or p12 <= p <= p23
    raw = [(i1 if i1 < 0 else math.nan, Region.MODE1_HYBRID_CHARGE),
           *([zero] if stationary_zero else []),
           (i3 if i3 > 0 else math.nan, Region.MODE3_HYBRID_DISCHARGE),
           (i4, off),
           (lo, _lower_bound_region(p_m, params)),
           (hi, Region.SAT_PB_MAX),
           *([] if stationary_zero else [zero])]
    cands = [(float(i), tag) for i, tag in raw if not math.isnan(i) and lo <= i <= hi]
    if not cands:
        raise InfeasibleDemand("empty candidate set")
    i, h, tag = _pick(cands, h_of)
    return PmpRegionDecision(_label(i, tag, p_m, v, bnd, params), i, h)


def numeric_law(p_m: float, p: float, q_b: float, coeffs: CostCoefficients,
                params: PowertrainParams, fidelity: Fidelity = Fidelity.M1,
                n_grid: int = 401) -> PmpRegionDecision:
    """Grid scan plus golden-section refinement of H over the admissible currents.

    Zero, both bounds and the engine-off current are always evaluated, so the
    kink at zero and the engine-off jump are never stepped over.
    """
    b = params.battery
    bnd = input_bounds(p_m, q_b, b, params.egu, fidelity)
    lo, hi = bnd.u_min, bnd.u_max
    grid = np.linspace(lo, hi, n_grid) if hi > lo else np.array([lo])
    extra = [0.0, lo, hi]
    v = ocv(q_b, b, fidelity)
    i4 = current_for_power(p_m, v, b.resistance)
    if not math.isnan(i4) and lo <= i4 <= hi:
        extra.append(float(i4))
    pts = np.unique(np.concatenate([grid, [x for x in extra if lo <= x <= hi]]))
    hs = hamiltonian_array(pts, q_b, p, p_m, coeffs, params, fidelity)
    k = int(np.argmin(hs))
    best_i, best_h = float(pts[k]), float(hs[k])

    def h_of(i):
        return float(hamiltonian_array(i, q_b, p, p_m, coeffs, params, fidelity))

    pr = p_m - (v - b.resistance * best_i) * best_i
    if pr > ENGINE_ON_TOL and pts.size > 2:
        left = float(pts[max(k - 1, 0)])
        right = float(pts[min(k + 1, pts.size - 1)])
        # refine on each side of the winner separately: 0 is a kink
        for a, c in ((left, best_i), (best_i, right)):
            if c > a:
                i, h = _golden(h_of, a, c)
                if h < best_h:
                    best_i, best_h = i, h
    # ties with the candidate list resolve toward the smaller |i|
    for x in extra:
        if lo <= x <= hi:
            hx = h_of(x)
            if hx < best_h or (hx == best_h and abs(x) < abs(best_i)):
                best_i, best_h = x, hx
    return PmpRegionDecision(_classify(best_i, p_m, q_b, bnd, params, fidelity), best_i, best_h)


# ------------------------------------------------------------ adjoint state --

def adjoint_gradients(q_b: float, i_b: float, p_m: float, params: PowertrainParams,
                      fidelity: Fidelity = Fidelity.M1, h: float = 1e-3) -> tuple[float, float]:
    """Central differences of sigma and fuel power in SoC at fixed current.

    Near the ends of [0, 1] the stencil becomes one-sided.  The fuel
    derivative is zero when the engine is off at ``q_b``.
    """
    b = params.battery
    qp, qm = min(q_b + h, 1.0), max(q_b - h, 0.0)
    span = qp - qm
    dsig = (float(severity(qp, i_b, b, fidelity)) - float(severity(qm, i_b, b, fidelity))) / span

    def p_r(q):
        return p_m - (ocv(q, b, fidelity) - b.resistance * i_b) * i_b

    if p_r(q_b) <= ENGINE_ON_TOL:
        return dsig, 0.0
    f = params.egu.fuel_power_on
    dpf = (float(f(p_r(qp), fidelity)) - float(f(p_r(qm), fidelity))) / span
    return dsig, dpf


def adjoint_step(p: float, q_b: float, i_b: float, dt: float, coeffs: CostCoefficients,
                 params: PowertrainParams, p_m: float = 0.0,
                 fidelity: Fidelity = Fidelity.M1) -> float:
    """One explicit-Euler step of the costate dynamics ``dp/dt = -dH/dq``."""
    if fidelity is Fidelity.M2:
        return p
    b = params.battery
    dsig, dpf = adjoint_gradients(q_b, i_b, p_m, params, fidelity)
    dh_dq = coeffs.beta * b.v_nom * abs(i_b) * dsig / b.n_cycles + coeffs.gamma * dpf
    return p - dt * dh_dq


def costate_variation(run: RunResult, coeffs: CostCoefficients,
                      params: PowertrainParams) -> float:
    """``p(0) - p(T)`` from integrating the costate along a recorded trajectory."""
    p = 0.0
    dt = run.meta["ts"]
    for k in range(run.i_b.size):
        p = adjoint_step(p, float(run.q[k]), float(run.i_b[k]), dt, coeffs, params,
                         p_m=float(run.p_m[k]))
    return -p


# --------------------------------------------------------- closed loop ------

POLICIES = ("explicit", "candidate", "numeric")


def _decider(policy: str, coeffs: CostCoefficients, params: PowertrainParams
             ) -> tuple[Callable[[float, float, float], PmpRegionDecision], Fidelity]:
    if policy == "explicit":
        return (lambda pm, p, q: explicit_law_constrained(pm, p, coeffs, params)), Fidelity.M2
    if policy == "candidate":
        return (lambda pm, p, q: candidate_set_law(pm, p, q, coeffs, params, Fidelity.M2)), Fidelity.M2
    if policy == "numeric":
        return (lambda pm, p, q: numeric_law(pm, p, q, coeffs, params, Fidelity.M1)), Fidelity.M1
    raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")


def run_policy(policy: str, demand: PowerDemandTrace, q0: float | None = None,
               adjoint: AdjointState | None = None, coeffs: CostCoefficients | None = None,
               params: PowertrainParams | None = None) -> RunResult:
    """Closed-loop run of a causal policy on the full plant model.

    The policy picks a battery current under its own model; that current is
    turned into a generator set-point and the plant settles the rest.
    """
    from .params import default_params
    params = params or default_params()
    coeffs = coeffs or params.costs
    adjoint = adjoint or AdjointState()
    decide, fid = _decider(policy, coeffs, params)
    b = params.battery
    n = len(demand)
    costate = np.zeros(n + 1)
    costate[0] = adjoint.p
    pm_all = np.asarray(demand.p_m, dtype=float)
    dt = demand.ts
    state = {"p": adjoint.p}

    def ctrl(k: int, q: float, xi: float) -> float:
        pm = float(pm_all[k])
        q_model = min(max(q, 0.0), 1.0)
        try:
            d = decide(pm, state["p"], q_model)
            i = d.i_opt
        except InfeasibleDemand:
            # outside the window: full generator power on traction, brake on regen
            i = None
        v = b.v_nom if fid is Fidelity.M2 else b.ocv_slope * q_model + b.ocv_offset
        if i is None:
            pr = params.egu.p_max if pm > 0 else 0.0
        else:
            pr = pm - (v - b.resistance * i) * i
        if adjoint.mode is AdjointMode.INTEGRATED and i is not None:
            state["p"] = adjoint_step(state["p"], q_model, i, dt, coeffs, params, p_m=pm)
        costate[k + 1] = state["p"]
        return pr

    return simulate(demand, ctrl, params, coeffs, q0=q0, label=f"PMP-{policy}",
                    costate=costate)


# -------------------------------------------------------------- region map --

def region_map(p_m_values, p_values, coeffs: CostCoefficients, params: PowertrainParams,
               constrained: bool = True) -> list[tuple[float, float, int, float]]:
    law = explicit_law_constrained if constrained else explicit_law_unconstrained
    rows = []
    for pm in p_m_values:
        for p in p_values:
            try:
                d = law(float(pm), float(p), coeffs, params)
                rows.append((float(pm), float(p), int(d.region), d.i_opt))
            except InfeasibleDemand:
                rows.append((float(pm), float(p), 0, math.nan))
    return rows


def write_region_map(path: str | Path, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["P_m_W", "p", "region_id", "i_opt_A"])
        for pm, p, rid, i in rows:
            w.writerow([repr(pm), repr(p), rid, repr(i)])
