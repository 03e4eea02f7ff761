"""Finite-horizon dynamic programming over a uniform SoC grid.

The backward sweep stores the cost-to-go ``J[k, j]`` and the minimising
current ``U[k, j]`` for every time sample and grid node.  Cost-to-go values
between nodes are linearly interpolated; leaving the SoC window, or an empty
admissible current set, costs :data:`SENTINEL` instead of infinity so that
interpolation never produces NaNs.

A pinned terminal SoC is imposed as a steep linear penalty outside the
tolerance band rather than as a sentinel.  At 1 s steps the SoC moves less
than one grid cell per step, so a sentinel blended into the edge cell of the
reachable set would spread backwards one cell per step and distort the whole
policy.  The slope exceeds any attainable marginal value of charge, so the
optimum still ends inside the band whenever the band is reachable.  Toy grids
with an explicit current set keep the sentinel so that they match exhaustive
search exactly.

The forward pass does not read ``U``: it re-minimises at the exact state
reached by the plant so the trace is not quantised to the grid.

Everything that runs per grid node is compiled with numba; the Python side
only packs parameters and assembles results.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from .maps import Table1D, Table2D
from .ocp import CostCoefficients, OcpSpec, RunResult, Strategy, Terminal
from .params import PowertrainParams
from .plant import simulate
from .powertrain import ENGINE_ON_TOL, Fidelity
from .vehicle import PowerDemandTrace

if "NUMBA_THREADING_LAYER" not in os.environ:
    # old system TBB builds make numba warn on every process; try it last
    nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

SENTINEL = 1e12
# state-bound slack when testing whether a successor SoC is inside the window
_Q_SLACK = 1e-12


class DpInfeasible(RuntimeError):
    """No admissible control sequence reaches the terminal set from q0."""


@dataclass(frozen=True)
class DpGridSpec:
    soc_step: float = 1e-3
    n_currents: int = 201
    # extra currents on each side of zero, inside the coarse cells touching it
    refine_points: int = 5
    # an explicit current set replaces the per-state uniform grid (toy problems)
    currents: tuple[float, ...] | None = None
    terminal_band_steps: float = 2.0
    # cost per unit SoC outside the band; None picks a safe slope on uniform
    # current grids and a hard sentinel on explicit ones, inf forces the latter
    terminal_slope: float | None = None
    xi_points: int = 5
    xi_span: float = 2e-4
    max_bytes: float = 4e9

    def __post_init__(self):
        if self.soc_step <= 0:
            raise ValueError("soc_step must be positive")
        if self.currents is None and self.n_currents < 2:
            raise ValueError("need at least two currents per state")
        if self.xi_points < 1:
            raise ValueError("xi_points must be >= 1")


@dataclass(frozen=True, eq=False)
class DpSolution:
    q_grid: np.ndarray
    cost_to_go: np.ndarray      # (N + 1, nq) or (N + 1, nq, nxi)
    policy: np.ndarray          # (N, nq) or (N, nq, nxi)
    trace: RunResult
    spec: OcpSpec
    xi_grid: np.ndarray | None = None

    @property
    def j0(self) -> float:
        """Cost-to-go at the initial state, interpolated like the solver does.

        This is the objective the solver minimised, in its own units (grams
        for the fuel strategies, terminal terms included); ``trace.cost`` is
        the money cost of the trajectory actually driven.
        """
        if self.xi_grid is None:
            return float(np.interp(self.spec.q0, self.q_grid, self.cost_to_go[0]))
        col = self.cost_to_go[0, :, 0]
        return float(np.interp(self.spec.q0, self.q_grid, col))

    def cost_to_go_csv(self, path: str | Path, every: int = 1) -> None:
        """Long-format ``k,q_b,J`` grid (one-state solutions only)."""
        if self.xi_grid is not None:
            raise ValueError("cost-to-go export is for one-state solutions")
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "q_b", "J"])
            for k in range(0, self.cost_to_go.shape[0], every):
                for q, jv in zip(self.q_grid, self.cost_to_go[k]):
                    w.writerow([k, repr(float(q)), repr(float(jv))])

    def policy_csv(self, path: str | Path, every: int = 1) -> None:
        if self.xi_grid is not None:
            raise ValueError("policy export is for one-state solutions")
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "q_b", "i_b_A"])
            for k in range(0, self.policy.shape[0], every):
                for q, u in zip(self.q_grid, self.policy[k]):
                    w.writerow([k, repr(float(q)), repr(float(u))])


# ----------------------------------------------------------- packed model ---
# indices into the float parameter vector handed to the kernels
(_OCV_A, _OCV_B, _R, _PB_MIN, _PB_MAX, _PR_MIN, _PR_MAX, _KIND, _ALPHA_V, _BETA_V_N,
 _GAMMA, _LHV, _SIG_CONST, _A_R, _B_R, _DT, _Q_LO, _Q_HI, _Q_CAP, _XI_GAIN,
 _SIG_FLAT, _FUEL_AFFINE, _NCUR, _NREF, _USE_EXPLICIT, _FUEL_UNIFORM, _FUEL_INV_DX,
 _NPAR) = range(28)


def _pack(params: PowertrainParams, coeffs: CostCoefficients, strategy: Strategy,
          fidelity: Fidelity, dt: float, grid: DpGridSpec):
    b, e = params.battery, params.egu
    m2 = fidelity is Fidelity.M2
    par = np.zeros(_NPAR)
    par[_OCV_A] = 0.0 if m2 else b.ocv_slope
    par[_OCV_B] = b.v_nom if m2 else b.ocv_offset
    par[_R] = b.resistance
    par[_PB_MIN], par[_PB_MAX] = b.p_min, b.p_max
    par[_PR_MIN], par[_PR_MAX] = e.p_min, e.p_max
    par[_KIND] = 0.0 if strategy is Strategy.TCMS else 1.0
    par[_ALPHA_V] = coeffs.alpha * b.v_nom / coeffs.eta_grid
    par[_BETA_V_N] = coeffs.beta * b.v_nom / b.n_cycles
    par[_GAMMA] = coeffs.gamma
    par[_LHV] = e.lhv
    par[_SIG_CONST] = b.sigma_nominal
    par[_A_R], par[_B_R] = e.a_r, e.b_r
    par[_DT] = dt
    par[_Q_LO], par[_Q_HI] = b.q_min, b.q_max
    par[_Q_CAP] = b.capacity()
    par[_XI_GAIN] = dt / (b.n_cycles * b.q_nom)

    sig = b.sigma_map
    if m2 or sig is None or (isinstance(sig, Table2D) and sig.is_flat()):
        par[_SIG_FLAT] = 1.0
        if sig is not None and not m2:
            par[_SIG_CONST] = float(sig.z.flat[0])
        sig_a, sig_b, sig_z = np.zeros(2), np.zeros(2), np.zeros((2, 2))
    elif isinstance(sig, Table2D):
        sig_a, sig_b, sig_z = sig.a, sig.b, sig.z
    else:
        raise TypeError("the DP solver needs a tabulated severity map")

    eta = e.eta_map
    if m2 or eta is None:
        par[_FUEL_AFFINE] = 1.0
        fx, fy = np.zeros(2), np.zeros(2)
    elif isinstance(eta, Table1D):
        fx, fy = eta.x, e._fuel_knots
        steps = np.diff(fx)
        if np.all(np.abs(steps - steps[0]) <= 1e-12 * abs(fx[-1])):
            par[_FUEL_UNIFORM] = 1.0
            par[_FUEL_INV_DX] = 1.0 / steps[0]
    else:
        raise TypeError("the DP solver needs a tabulated EGU efficiency map")

    if grid.currents is not None:
        par[_USE_EXPLICIT] = 1.0
        cur = np.array(sorted(grid.currents), dtype=float)
    else:
        cur = np.zeros(1)
    par[_NCUR] = grid.n_currents
    par[_NREF] = grid.refine_points
    return par, sig_a, sig_b, sig_z, fx, fy, cur


# --------------------------------------------------------------- kernels ----

@nb.njit(cache=True, error_model="numpy")
def _lerp_uniform(x0, inv_dx, y, x):
    """Edge-clamped linear interpolation on a uniform grid starting at x0."""
    t = (x - x0) * inv_dx
    if t <= 0.0:
        return y[0]
    a = int(t)
    if a >= y.size - 1:
        return y[y.size - 1]
    f = t - a
    if f == 0.0:
        return y[a]
    return y[a] + f * (y[a + 1] - y[a])


@nb.njit(cache=True, error_model="numpy")
def _sigma(par, sa, sb, sz, q, i):
    if par[_SIG_FLAT] > 0.5:
        return par[_SIG_CONST]
    qa = min(max(q, sa[0]), sa[-1])
    ib = min(max(i, sb[0]), sb[-1])
    ia = min(max(np.searchsorted(sa, qa, side="right") - 1, 0), sa.size - 2)
    jb = min(max(np.searchsorted(sb, ib, side="right") - 1, 0), sb.size - 2)
    ta = (qa - sa[ia]) / (sa[ia + 1] - sa[ia])
    tb = (ib - sb[jb]) / (sb[jb + 1] - sb[jb])
    return ((1 - ta) * (1 - tb) * sz[ia, jb] + ta * (1 - tb) * sz[ia + 1, jb]
            + (1 - ta) * tb * sz[ia, jb + 1] + ta * tb * sz[ia + 1, jb + 1])


@nb.njit(cache=True, error_model="numpy")
def _fuel(par, fx, fy, pr):
    if pr <= ENGINE_ON_TOL:
        return 0.0
    if par[_FUEL_AFFINE] > 0.5:
        return par[_A_R] * pr + par[_B_R]
    if par[_FUEL_UNIFORM] > 0.5:
        return _lerp_uniform(fx[0], par[_FUEL_INV_DX], fy, pr)
    if pr <= fx[0]:
        return fy[0]
    if pr >= fx[-1]:
        return fy[-1]
    a = np.searchsorted(fx, pr, side="right") - 1
    return fy[a] + (pr - fx[a]) * (fy[a + 1] - fy[a]) / (fx[a + 1] - fx[a])


@nb.njit(cache=True, error_model="numpy")
def _root(p, v, r):
    d = v * v - 4.0 * r * p
    if d < 0.0:
        d = 0.0
    return (v - math.sqrt(d)) / (2.0 * r)


@nb.njit(cache=True, error_model="numpy")
def _bounds(par, pm, v):
    r = par[_R]
    p_lo = max(par[_PB_MIN], pm - par[_PR_MAX])
    p_hi = min(min(par[_PB_MAX], pm - par[_PR_MIN]), v * v / (4.0 * r))
    if p_lo > p_hi:
        return 1.0, 0.0, False
    return _root(p_lo, v, r), _root(p_hi, v, r), True


@nb.njit(cache=True, error_model="numpy")
def _stage(par, sa, sb, sz, fx, fy, pm, q, v, i):
    """Stage cost and severity for current ``i``."""
    pr = pm - (v - par[_R] * i) * i
    if pr < 0.0:
        pr = 0.0
    elif pr > par[_PR_MAX]:
        pr = par[_PR_MAX]
    pf = _fuel(par, fx, fy, pr)
    sig = _sigma(par, sa, sb, sz, q, i)
    if par[_KIND] < 0.5:
        return par[_DT] * (par[_ALPHA_V] * i + par[_BETA_V_N] * sig * abs(i)
                           + par[_GAMMA] * pf), sig
    return par[_DT] * pf / par[_LHV], sig


@nb.njit(cache=True, error_model="numpy")
def _n_candidates(par, cur, lo, hi):
    """Size of the current set of one state.

    Layout: the explicit set; or ``n_currents`` uniform points over
    ``[lo, hi]`` followed, when zero is interior, by zero and pairs of
    refinement points around it inside the coarse cells touching it.
    """
    if par[_USE_EXPLICIT] > 0.5:
        return cur.size
    if hi <= lo:
        return 1
    n = int(par[_NCUR])
    if lo < 0.0 < hi:
        n += 1 + 2 * int(par[_NREF])
    return n


@nb.njit(cache=True, error_model="numpy")
def _candidate(par, cur, lo, hi, step, m):
    """The m-th current of the state's set, or NaN when it falls outside [lo, hi]."""
    if par[_USE_EXPLICIT] > 0.5:
        c = cur[m]
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        return c if lo - tol <= c <= hi + tol else np.nan
    nc = int(par[_NCUR])
    if m < nc - 1:
        return lo + step * m
    if m == nc - 1:
        return hi
    m -= nc
    if m == 0:
        return 0.0
    c = step / (par[_NREF] + 1) * ((m + 1) // 2)
    if m % 2 == 1:
        c = -c
    return c if lo < c < hi else np.nan


@nb.njit(cache=True, error_model="numpy")
def _better(c, i, best, arg):
    return c < best or (c == best and not math.isnan(arg) and abs(i) < abs(arg))


@nb.njit(cache=True, error_model="numpy")
def _best1(par, sa, sb, sz, fx, fy, cur, jn, q0g, inv_dq, pm, q, sent):
    v = par[_OCV_A] * q + par[_OCV_B]
    lo, hi, ok = _bounds(par, pm, v)
    if not ok:
        return sent, np.nan
    best = sent
    arg = np.nan
    gain = par[_DT] / par[_Q_CAP]
    q_lo = par[_Q_LO] - _Q_SLACK
    q_hi = par[_Q_HI] + _Q_SLACK
    step = (hi - lo) / (par[_NCUR] - 1.0)
    for m in range(_n_candidates(par, cur, lo, hi)):
        i = _candidate(par, cur, lo, hi, step, m)
        if math.isnan(i):
            continue
        qn = q - gain * i
        if qn < q_lo or qn > q_hi:
            continue
        g, _ = _stage(par, sa, sb, sz, fx, fy, pm, q, v, i)
        c = g + _lerp_uniform(q0g, inv_dq, jn, qn)
        if _better(c, i, best, arg):
            best = c
            arg = i
    if best > sent:
        best = sent
    return best, arg


@nb.njit(parallel=True, cache=True, error_model="numpy")
def _backward1(par, sa, sb, sz, fx, fy, cur, pm, qg, j_term, sent):
    n = pm.size
    nq = qg.size
    inv_dq = 1.0 / (qg[1] - qg[0]) if nq > 1 else 0.0
    jj = np.empty((n + 1, nq))
    uu = np.empty((n, nq))
    jj[n] = j_term
    for k in range(n - 1, -1, -1):
        jn = jj[k + 1]
        for j in nb.prange(nq):
            jj[k, j], uu[k, j] = _best1(par, sa, sb, sz, fx, fy, cur, jn, qg[0], inv_dq,
                                        pm[k], qg[j], sent)
    return jj, uu


@nb.njit(cache=True, error_model="numpy")
def _interp2(jn, q0g, inv_dq, x0g, inv_dx, q, xi):
    nx = jn.shape[1]
    if nx == 1:
        return _lerp_uniform(q0g, inv_dq, jn[:, 0], q)
    y = (xi - x0g) * inv_dx
    if y < 0.0:
        y = 0.0
    if y > nx - 1:
        y = nx - 1.0
    b = int(y)
    if b >= nx - 1:
        b = nx - 2
    s = y - b
    ja = _lerp_uniform(q0g, inv_dq, jn[:, b], q)
    if s == 0.0:
        return ja
    jb = _lerp_uniform(q0g, inv_dq, jn[:, b + 1], q)
    return ja + s * (jb - ja)


@nb.njit(cache=True, error_model="numpy")
def _best2(par, sa, sb, sz, fx, fy, cur, jn, q0g, inv_dq, x0g, inv_dx, pm, q, xi, sent, q_nom):
    v = par[_OCV_A] * q + par[_OCV_B]
    lo, hi, ok = _bounds(par, pm, v)
    if not ok:
        return sent, np.nan
    best = sent
    arg = np.nan
    gain = par[_DT] / (q_nom * (1.0 - 0.2 * xi))
    q_lo = par[_Q_LO] - _Q_SLACK
    q_hi = par[_Q_HI] + _Q_SLACK
    step = (hi - lo) / (par[_NCUR] - 1.0)
    for m in range(_n_candidates(par, cur, lo, hi)):
        i = _candidate(par, cur, lo, hi, step, m)
        if math.isnan(i):
            continue
        qn = q - gain * i
        if qn < q_lo or qn > q_hi:
            continue
        g, sig = _stage(par, sa, sb, sz, fx, fy, pm, q, v, i)
        xn = xi + par[_XI_GAIN] * sig * abs(i)
        c = g + _interp2(jn, q0g, inv_dq, x0g, inv_dx, qn, xn)
        if _better(c, i, best, arg):
            best = c
            arg = i
    if best > sent:
        best = sent
    return best, arg


@nb.njit(parallel=True, cache=True, error_model="numpy")
def _backward2(par, sa, sb, sz, fx, fy, cur, pm, qg, xg, j_term, sent, q_nom):
    n = pm.size
    nq = qg.size
    nx = xg.size
    inv_dq = 1.0 / (qg[1] - qg[0]) if nq > 1 else 0.0
    inv_dx = 1.0 / (xg[1] - xg[0]) if nx > 1 else 0.0
    jj = np.empty((n + 1, nq, nx))
    uu = np.empty((n, nq, nx))
    jj[n] = j_term
    for k in range(n - 1, -1, -1):
        jn = jj[k + 1]
        for cell in nb.prange(nq * nx):
            j = cell // nx
            m = cell % nx
            jj[k, j, m], uu[k, j, m] = _best2(par, sa, sb, sz, fx, fy, cur, jn, qg[0], inv_dq,
                                              xg[0], inv_dx, pm[k], qg[j], xg[m], sent, q_nom)
    return jj, uu


# ------------------------------------------------------------- front end ----

def soc_grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(round((hi - lo) / step))
    if n < 1 or abs(lo + n * step - hi) > 1e-9 * max(1.0, abs(hi)):
        raise ValueError(f"SoC window [{lo}, {hi}] is not a multiple of step {step}")
    return lo + step * np.arange(n + 1)


def terminal_cost(spec: OcpSpec, q: np.ndarray, coeffs: CostCoefficients, step: float,
                  band_steps: float, slope: float = math.inf) -> np.ndarray:
    """Terminal cost on the grid; a pinned SoC costs ``slope`` per unit outside the band."""
    term = spec.terminal
    if term is Terminal.FREE:
        return np.zeros_like(q)
    if term is Terminal.LINEAR_PENALTY:
        return spec.zeta_value(coeffs) * (q - spec.q0)
    band = band_steps * step + 1e-12
    miss = np.maximum(np.abs(q - spec.q0) - band, 0.0)
    if math.isinf(slope):
        return np.where(miss > 0.0, SENTINEL, 0.0)
    return slope * miss


def band_penalty_slope(params: PowertrainParams, coeffs: CostCoefficients, spec: OcpSpec) -> float:
    """Ten times the dearest way to put one unit of SoC back into the battery.

    Charge is priced at the worse of the steepest marginal and the worst
    average fuel rate of the generator, delivered at the highest OCV; the
    factor ten covers resistive losses with room to spare.
    """
    b, e = params.battery, params.egu
    m2 = spec.fidelity is Fidelity.M2
    v_max = b.v_nom if m2 else b.ocv_slope * b.q_max + b.ocv_offset
    if m2 or e.eta_map is None:
        rate = e.a_r + e.b_r / e.p_max
    else:
        eta = e.eta_map
        rate = max(float(np.max(np.diff(e._fuel_knots) / np.diff(eta.x))),
                   float(1.0 / np.min(eta.y)))
    electric = b.capacity() * v_max
    per_unit = rate * electric / e.lhv
    if spec.strategy is Strategy.TCMS:
        sig = b.sigma_map
        sig_max = float(np.max(sig.z)) if isinstance(sig, Table2D) and not m2 \
            else b.sigma_nominal
        # grid and wear terms are priced at the nominal voltage, as in the stage cost
        per_unit = (coeffs.gamma * rate * electric
                    + b.capacity() * b.v_nom * (coeffs.alpha / coeffs.eta_grid
                                                + coeffs.beta * sig_max / b.n_cycles))
    return 10.0 * per_unit


def _terminal_for(spec: OcpSpec, qg: np.ndarray, coeffs: CostCoefficients,
                  params: PowertrainParams, grid: DpGridSpec) -> np.ndarray:
    slope = grid.terminal_slope
    if slope is None:
        slope = math.inf if grid.currents is not None else band_penalty_slope(params, coeffs, spec)
    return terminal_cost(spec, qg, coeffs, grid.soc_step, grid.terminal_band_steps, slope)


def _check_band(spec: OcpSpec, trace: RunResult, grid: DpGridSpec) -> None:
    """A penalised terminal can be missed; missing it means the band is unreachable."""
    if spec.terminal is not Terminal.FIXED:
        return
    band = grid.terminal_band_steps * grid.soc_step
    if abs(trace.q[-1] - spec.q0) > band + 1e-9:
        raise DpInfeasible(f"{spec.strategy.value}: final SoC {trace.q[-1]:.4f} cannot be "
                           f"brought within {band:g} of {spec.q0}")


def _check_demand(demand: PowerDemandTrace, params: PowertrainParams) -> None:
    b, e = params.battery, params.egu
    worst = min(b.p_max, b.ocv_offset ** 2 / (4 * b.resistance)) + e.p_max
    if np.max(demand.p_m) > worst:
        raise DpInfeasible(f"peak demand {np.max(demand.p_m):.0f} W exceeds capability {worst:.0f} W")


def _with_bounds(params: PowertrainParams, spec: OcpSpec) -> PowertrainParams:
    from dataclasses import replace
    lo, hi = spec.q_bounds
    if (lo, hi) == (params.battery.q_min, params.battery.q_max):
        return params
    return replace(params, battery=replace(params.battery, q_min=lo, q_max=hi))


def dp_solve(spec: OcpSpec, demand: PowerDemandTrace, coeffs: CostCoefficients | None = None,
             params: PowertrainParams | None = None, grid: DpGridSpec | None = None) -> DpSolution:
    """Backward value iteration for one strategy, then a forward re-minimising pass."""
    from .params import default_params
    params = _with_bounds(params or default_params(), spec)
    coeffs = coeffs or params.costs
    grid = grid or DpGridSpec()
    if spec.soh_as_state:
        return dp_solve_two_state(spec, demand, coeffs, params, grid)
    _check_demand(demand, params)
    b = params.battery
    qg = soc_grid(b.q_min, b.q_max, grid.soc_step)
    if grid.max_bytes < 16.0 * (len(demand) + 1) * qg.size:
        raise MemoryError("DP grid exceeds the configured memory budget")
    packed = _pack(params, coeffs, spec.strategy, spec.fidelity, demand.ts, grid)
    pm = np.ascontiguousarray(demand.p_m, dtype=float)
    j_term = _terminal_for(spec, qg, coeffs, params, grid)
    jj, uu = _backward1(*packed, pm, qg, j_term, SENTINEL)
    if np.interp(spec.q0, qg, jj[0]) >= SENTINEL:
        raise DpInfeasible(f"{spec.strategy.value}: no feasible path from q0={spec.q0}")
    inv_dq = 1.0 / (qg[1] - qg[0]) if qg.size > 1 else 0.0

    def decide(k: int, q: float) -> float:
        _, i = _best1(*packed, jj[k + 1], qg[0], inv_dq, pm[k], q, SENTINEL)
        if math.isnan(i):
            raise DpInfeasible(f"{spec.strategy.value}: forward pass stuck at step {k}, q={q:.6f}")
        return i

    trace = _forward(decide, demand, params, coeffs, spec, two_state=False)
    _check_band(spec, trace, grid)
    return DpSolution(qg, jj, uu, trace, spec)


def _forward(decide, demand, params, coeffs, spec, two_state):
    b = params.battery
    m2 = spec.fidelity is Fidelity.M2
    r = b.resistance

    def ctrl(k, q, xi):
        i = decide(k, q, xi) if two_state else decide(k, q)
        v = b.v_nom if m2 else b.ocv_slope * q + b.ocv_offset
        return float(demand.p_m[k]) - (v - r * i) * i

    return simulate(demand, ctrl, params, coeffs, q0=spec.q0,
                    label=f"DP-{spec.strategy.value}")


def dp_solve_two_state(spec: OcpSpec, demand: PowerDemandTrace,
                       coeffs: CostCoefficients | None = None,
                       params: PowertrainParams | None = None,
                       grid: DpGridSpec | None = None) -> DpSolution:
    """DP over (SoC, SoH) with capacity fading as the SoH state grows.

    The SoH grid spans ``[xi_0, xi_0 + xi_span]``; successor values beyond it
    are clamped to the edge.  A single-point SoH grid reduces to
    :func:`dp_solve`.
    """
    from dataclasses import replace as _replace
    from .params import default_params
    params = _with_bounds(params or default_params(), spec)
    coeffs = coeffs or params.costs
    grid = grid or DpGridSpec()
    one_state = _replace(spec, soh_as_state=False)
    if grid.xi_points == 1:
        sol = dp_solve(one_state, demand, coeffs, params, grid)
        return DpSolution(sol.q_grid, sol.cost_to_go[:, :, None], sol.policy[:, :, None],
                          sol.trace, spec, xi_grid=np.array([params.battery.soh_initial]))
    _check_demand(demand, params)
    b = params.battery
    qg = soc_grid(b.q_min, b.q_max, grid.soc_step)
    xg = b.soh_initial + np.linspace(0.0, grid.xi_span, grid.xi_points)
    cells = (len(demand) + 1) * qg.size * xg.size
    if 16.0 * cells > grid.max_bytes:
        raise MemoryError(f"two-state grid needs {16.0 * cells / 1e9:.1f} GB; "
                          f"budget is {grid.max_bytes / 1e9:.1f} GB")
    packed = _pack(params, coeffs, spec.strategy, spec.fidelity, demand.ts, grid)
    pm = np.ascontiguousarray(demand.p_m, dtype=float)
    jt = _terminal_for(spec, qg, coeffs, params, grid)
    j_term = np.repeat(jt[:, None], xg.size, axis=1)
    jj, uu = _backward2(*packed, pm, qg, xg, j_term, SENTINEL, b.q_nom)
    inv_dq = 1.0 / (qg[1] - qg[0])
    inv_dx = 1.0 / (xg[1] - xg[0])
    j0 = np.interp(spec.q0, qg, jj[0, :, 0])
    if j0 >= SENTINEL:
        raise DpInfeasible(f"{spec.strategy.value}: no feasible path from q0={spec.q0}")

    def decide(k, q, xi):
        _, i = _best2(*packed, jj[k + 1], qg[0], inv_dq, xg[0], inv_dx,
                      pm[k], q, xi, SENTINEL, b.q_nom)
        if math.isnan(i):
            raise DpInfeasible(f"forward pass stuck at step {k}")
        return i

    trace = _forward_fade(decide, demand, params, coeffs, spec)
    _check_band(spec, trace, grid)
    return DpSolution(qg, jj, uu, trace, spec, xi_grid=xg)


def _forward_fade(decide, demand, params, coeffs, spec):
    """Forward pass for the two-state model: capacity follows the SoH trace."""
    b = params.battery
    m2 = spec.fidelity is Fidelity.M2
    r = b.resistance

    def ctrl(k, q, xi):
        i = decide(k, q, xi)
        v = b.v_nom if m2 else b.ocv_slope * q + b.ocv_offset
        return float(demand.p_m[k]) - (v - r * i) * i

    return simulate(demand, ctrl, params, coeffs, q0=spec.q0,
                    label=f"DP2-{spec.strategy.value}", soh_feedback=True)


# -------------------------------------------------------------- ECMS zeta ---

@dataclass(frozen=True)
class ZetaTuning:
    zeta: float
    dq: float
    iterations: int
    solution: DpSolution


def tune_ecms_zeta(demand: PowerDemandTrace, coeffs: CostCoefficients | None = None,
                   params: PowertrainParams | None = None, target_dq: float = 0.0,
                   tol: float = 1e-3, grid: DpGridSpec | None = None,
                   q0: float | None = None, max_iter: int = 40) -> ZetaTuning:
    """Find the terminal weight whose DP-ECMS run ends at ``q0 + target_dq``.

    With ``h = zeta * (q_T - q_0)`` a more negative ``zeta`` rewards final
    charge, so ``q_T`` is nonincreasing in ``zeta``.  The search brackets the
    target starting from ``zeta = 0`` (pure fuel minimisation) in growing
    steps and then narrows the bracket by regula falsi.
    """
    from dataclasses import replace as _replace
    from .params import default_params
    params = params or default_params()
    coeffs = coeffs or params.costs
    q0 = params.q0 if q0 is None else q0
    spec = OcpSpec(Strategy.ECMS, q0=q0, q_bounds=(params.battery.q_min, params.battery.q_max),
                   fidelity=params.fidelity)
    it = 0

    def run(z):
        nonlocal it
        it += 1
        sol = dp_solve(_replace(spec, zeta=z), demand, coeffs, params, grid)
        return sol, sol.trace.dq - target_dq

    sol_hi, err_hi = run(0.0)
    if abs(err_hi) <= tol:
        return ZetaTuning(0.0, sol_hi.trace.dq, it, sol_hi)
    # err decreases with zeta: grow a bracket away from zero, then regula falsi
    direction = -1.0 if err_hi < 0 else 1.0
    step = 1000.0
    z_far = direction * step
    sol_far, err_far = run(z_far)
    while np.sign(err_far) == np.sign(err_hi) and abs(err_far) > tol:
        if it >= max_iter:
            raise ValueError(f"target dq={target_dq} not reachable (last zeta {z_far:g})")
        step *= 4.0
        z_far = direction * step
        sol_far, err_far = run(z_far)
    if abs(err_far) <= tol:
        return ZetaTuning(z_far, sol_far.trace.dq, it, sol_far)
    # Illinois variant: halve the stale end's residual so both ends keep moving
    z_a, f_a, z_b, f_b = 0.0, err_hi, z_far, err_far
    best = (sol_far, err_far, z_far)
    side = 0
    while it < max_iter:
        z_m = (z_a * f_b - z_b * f_a) / (f_b - f_a)
        if not min(z_a, z_b) < z_m < max(z_a, z_b):
            z_m = 0.5 * (z_a + z_b)
        sol_m, err_m = run(z_m)
        if abs(err_m) < abs(best[1]):
            best = (sol_m, err_m, z_m)
        if abs(err_m) <= tol:
            return ZetaTuning(z_m, sol_m.trace.dq, it, sol_m)
        if np.sign(err_m) == np.sign(f_a):
            z_a, f_a = z_m, err_m
            if side == -1:
                f_b *= 0.5
            side = -1
        else:
            z_b, f_b = z_m, err_m
            if side == 1:
                f_a *= 0.5
            side = 1
    sol, err, z = best
    raise ValueError(f"zeta search did not converge: best zeta={z:g}, dq error {err:.2e}")
