import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hevcost.oracles import (
    PolynomialMaps, hamiltonian_grid_argmin, m2_equivalent, simplified_hamiltonian,
)
from hevcost.params import PowertrainParams
from hevcost.pmp import (
    AdjointMode, AdjointState, Region, adjoint_gradients, adjoint_step, branch_currents,
    candidate_set_law, closed_form_power_limits, costate_limits, costate_variation,
    explicit_law_constrained, explicit_law_unconstrained, hamiltonian, hamiltonian_array,
    hamiltonian_mode, numeric_law, power_limits, psi_terms, region_map, run_policy,
    saturation_costates, write_region_map,
)
from hevcost.powertrain import Fidelity, InfeasibleDemand, battery_power, input_bounds
from hevcost.vehicle import PowerDemandTrace

P = PowertrainParams()
C = P.costs
M1, M2 = Fidelity.M1, Fidelity.M2
P12, P23 = costate_limits(C, P)
VERTEX = 355.0 ** 2 / (4 * 0.5)

pm_values = st.floats(-50e3, 75e3)
costates = st.floats(-15.0, 15.0)


def _zero_trace(n):
    z = np.zeros(n)
    return PowerDemandTrace(np.arange(float(n)), z, z.copy(), z.copy(), name="parked")


# ------------------------------------------------------------ Hamiltonian ---

def test_engine_only_hamiltonian():
    pm = 12e3
    h = hamiltonian(0.5, 0.0, 3.0, pm, C, P, M2)
    assert h == C.gamma * (3.43 * pm + 5610.0)
    assert hamiltonian_mode(2, 0.0, 3.0, pm, C, P) == h


@pytest.mark.parametrize("fidelity", [M1, M2])
def test_null_action_hamiltonian_is_zero(fidelity):
    assert hamiltonian(0.5, 0.0, 0.0, 0.0, C, P, fidelity) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 150.0), costates, st.floats(20e3, 70e3))
def test_hybrid_discharge_branch_term_by_term(i, p, pm):
    v, r = 355.0, 0.5
    p_r = pm - (v - r * i) * i
    if p_r <= 1.0:
        return
    grid = C.alpha / C.eta_grid * v * i
    wear = C.beta * 1.0 * v * i / 2000.0
    fuel = C.gamma * (3.43 * p_r + 5610.0)
    costate = -p * i / 234000.0
    expected = grid + wear + fuel + costate
    assert hamiltonian_mode(3, i, p, pm, C, P) == pytest.approx(expected, rel=1e-12, abs=1e-15)
    ref = float(simplified_hamiltonian(i, p, pm, C, P))
    assert hamiltonian(0.5, i, p, pm, C, P, M2) == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_negative_generator_power_rejected():
    with pytest.raises(InfeasibleDemand):
        hamiltonian(0.5, 50.0, 0.0, 0.0, C, P, M2)
    assert math.isinf(hamiltonian_array(50.0, 0.5, 0.0, 0.0, C, P, M1))


def test_unknown_branch():
    with pytest.raises(ValueError):
        hamiltonian_mode(6, 0.0, 0.0, 0.0, C, P)


# ------------------------------------------------------ thresholds, limits --

def test_costate_thresholds():
    assert P12 == pytest.approx(-7.248, abs=5e-4)
    assert P23 == pytest.approx(4.289, abs=5e-4)
    lo, hi = saturation_costates(C, P)
    assert lo == pytest.approx(-9.315, abs=5e-4)
    assert hi == pytest.approx(7.614, abs=5e-4)


def test_branch_optima_reach_the_battery_limits_at_saturation_costates():
    lo, hi = saturation_costates(C, P)
    i1, _ = branch_currents(lo, C, P)
    _, i3 = branch_currents(hi, C, P)
    assert battery_power(i1, 355.0, 0.5) == pytest.approx(-50e3, rel=1e-9)
    assert battery_power(i3, 355.0, 0.5) == pytest.approx(50e3, rel=1e-9)


def test_branch_optima_change_sign_at_the_thresholds():
    i1, _ = branch_currents(P12, C, P)
    _, i3 = branch_currents(P23, C, P)
    assert i1 == pytest.approx(0.0, abs=1e-9)
    assert i3 == pytest.approx(0.0, abs=1e-9)


def _competing(key, p, pm):
    """H of the engine-on branch optimum and of the engine-off current at one limit."""
    mode = key[0]
    i1, i3 = branch_currents(p, C, P)
    i_on = {1: i1, 2: 0.0, 3: i3}[mode]
    i_off = (355.0 - math.sqrt(355.0 ** 2 - 4 * 0.5 * pm)) / (2 * 0.5)
    return hamiltonian_mode(mode, i_on, p, pm, C, P), hamiltonian_mode(key[1], i_off, p, pm, C, P)


@settings(max_examples=300, deadline=None)
@given(costates)
def test_power_limits_are_hamiltonian_equalities(p):
    lims = power_limits(p, C, P)
    if p < P12:
        keys = [(1, 4), (1, 5)]
    elif p <= P23:
        keys = [(2, 4)]
    else:
        keys = [(3, 4)]
    for key in keys:
        pm = lims[key]
        if not math.isfinite(pm) or pm >= VERTEX * (1 - 1e-12):
            continue
        h_on, h_off = _competing(key, p, pm)
        assert abs(h_on - h_off) <= 1e-6 * max(abs(h_on), abs(h_off))


@settings(max_examples=200, deadline=None)
@given(costates)
def test_closed_form_limits(p):
    computed = power_limits(p, C, P)
    closed = closed_form_power_limits(p, C, P)
    if math.isfinite(computed[(2, 4)]) and computed[(2, 4)] < VERTEX * (1 - 1e-9):
        assert closed[(2, 4)] == pytest.approx(computed[(2, 4)], rel=1e-6, abs=1e-3)
    if math.isfinite(computed[(3, 4)]) and computed[(3, 4)] < VERTEX * (1 - 1e-9):
        assert closed[(3, 4)] == pytest.approx(computed[(3, 4)], rel=1e-6, abs=1e-3)


def test_psi_terms_are_the_fourteen_named_expressions():
    psi = psi_terms(0.0, C, P)
    assert sorted(psi) == list(range(1, 15))
    assert psi[13] == 0.0
    assert psi[2] == pytest.approx(4 * 3.43 ** 2 * 2000 ** 2 * 234000 ** 2 * 0.5 * C.gamma ** 2)


# ------------------------------------------------------------ explicit law --

def test_deadband_gives_engine_only():
    d = explicit_law_unconstrained(40e3, 0.0, C, P)
    assert d.region is Region.MODE2_ENGINE_ONLY
    assert d.i_opt == 0.0
    assert d.hamiltonian_value == hamiltonian(0.5, 0.0, 0.0, 40e3, C, P, M2)


def test_zero_demand_with_electric_mode_draws_no_current():
    d = explicit_law_unconstrained(0.0, 0.0, C, P)
    assert d.region is Region.MODE4_PURE_ELECTRIC
    assert d.i_opt == 0.0


def test_regen_root_is_the_negative_branch():
    d = explicit_law_unconstrained(-10e3, 0.0, C, P)
    assert d.region is Region.MODE5_REGEN
    assert d.i_opt < 0
    assert battery_power(d.i_opt, 355.0, 0.5) == pytest.approx(-10e3, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(VERTEX * 1.0001, 75e3), costates)
def test_demand_above_the_parabola_keeps_the_engine_on(pm, p):
    d = explicit_law_unconstrained(pm, p, C, P)
    assert d.region in (Region.MODE1_HYBRID_CHARGE, Region.MODE2_ENGINE_ONLY,
                        Region.MODE3_HYBRID_DISCHARGE)


@pytest.mark.parametrize("pm", [30e3, 45e3, 60e3])
def test_current_vanishes_exactly_on_the_costate_deadband(pm):
    lims = power_limits(0.0, C, P)
    assert pm > lims[(2, 4)]
    for p in np.linspace(P12, P23, 41):
        assert explicit_law_unconstrained(pm, float(p), C, P).i_opt == 0.0
    assert explicit_law_unconstrained(pm, P12 - 0.05, C, P).i_opt < 0
    assert explicit_law_unconstrained(pm, P23 + 0.05, C, P).i_opt > 0


def test_region_partition_on_a_dense_grid():
    """Every point is claimed by exactly one of the five explicit-law conditions."""
    for pm in np.linspace(-50e3, 60e3, 111):
        for p in np.linspace(-15.0, 15.0, 121):
            lims = power_limits(float(p), C, P)
            claims = {
                1: (pm >= 0 and p < P12 and pm > lims[(1, 4)])
                or (pm < 0 and p < P12 and pm > lims[(1, 5)]),
                2: pm >= 0 and P12 <= p <= P23 and pm > lims[(2, 4)],
                3: pm >= 0 and p > P23 and pm > lims[(3, 4)],
            }
            on = any(claims.values())
            claims[4] = pm >= 0 and not on
            claims[5] = pm < 0 and not on
            owners = [m for m, c in claims.items() if c]
            assert len(owners) == 1
            d = explicit_law_unconstrained(float(pm), float(p), C, P)
            assert int(d.region) == owners[0]


def test_constrained_law_rejects_demand_beyond_capability():
    with pytest.raises(InfeasibleDemand):
        explicit_law_constrained(75e3 + 1.0, 0.0, C, P)


def test_discharge_saturates_at_the_battery_limit():
    free = explicit_law_unconstrained(60e3, 12.0, C, P)
    bnd = input_bounds(60e3, 0.5, P.battery, P.egu, M2)
    assert free.i_opt > bnd.u_max
    d = explicit_law_constrained(60e3, 12.0, C, P)
    assert d.region is Region.SAT_PB_MAX
    assert d.i_opt == bnd.u_max


def test_charge_saturations():
    # strong regeneration: the battery power limit binds before the generator
    d = explicit_law_constrained(-30e3, -14.0, C, P)
    assert d.region is Region.SAT_PB_MIN
    assert battery_power(d.i_opt, 355.0, 0.5) == pytest.approx(-50e3, rel=1e-9)
    # under traction the generator rating binds first
    d = explicit_law_constrained(20e3, -14.0, C, P)
    assert d.region is Region.SAT_PR_MAX
    assert 20e3 - battery_power(d.i_opt, 355.0, 0.5) == pytest.approx(25e3, rel=1e-9)


def test_full_capability_is_labelled_alike_by_both_laws():
    for p in (-12.0, 0.0, 12.0):
        d = explicit_law_constrained(75e3, p, C, P)
        c = candidate_set_law(75e3, p, 0.5, C, P, M2)
        assert (d.i_opt, d.region) == (c.i_opt, c.region)


@settings(max_examples=500, deadline=None)
@given(pm_values, costates)
def test_explicit_law_matches_grid_argmin(pm, p):
    try:
        d = explicit_law_constrained(pm, p, C, P)
    except InfeasibleDemand:
        return
    bnd = input_bounds(pm, 0.5, P.battery, P.egu, M2)
    assert bnd.u_min <= d.i_opt <= bnd.u_max
    assert abs(d.i_opt - hamiltonian_grid_argmin(pm, p, C, P)) <= 0.02


@settings(max_examples=500, deadline=None)
@given(pm_values, costates, st.floats(0.2, 0.9))
def test_candidate_set_equals_explicit_law(pm, p, q):
    try:
        d = explicit_law_constrained(pm, p, C, P)
    except InfeasibleDemand:
        with pytest.raises(InfeasibleDemand):
            candidate_set_law(pm, p, q, C, P, M2)
        return
    c = candidate_set_law(pm, p, q, C, P, M2)
    assert (c.i_opt, c.region) == (d.i_opt, d.region)


def test_candidates_collapse_to_zero():
    d = candidate_set_law(0.0, 0.0, 0.5, C, P, M2)
    assert d.i_opt == 0.0 and d.region is Region.MODE4_PURE_ELECTRIC


@settings(max_examples=200, deadline=None)
@given(pm_values, costates, st.floats(0.2, 0.9))
def test_full_model_candidate_set_beats_a_fine_grid(pm, p, q):
    try:
        bnd = input_bounds(pm, q, P.battery, P.egu, M1)
    except InfeasibleDemand:
        return
    d = candidate_set_law(pm, p, q, C, P, M1)
    grid = np.linspace(bnd.u_min, bnd.u_max, 2001)
    h = hamiltonian_array(grid, q, p, pm, C, P, M1)
    assert d.hamiltonian_value <= h.min() + 1e-9


@settings(max_examples=200, deadline=None)
@given(pm_values, costates, st.floats(0.2, 0.9))
def test_numeric_law_beats_a_fine_grid(pm, p, q):
    try:
        bnd = input_bounds(pm, q, P.battery, P.egu, M1)
    except InfeasibleDemand:
        return
    d = numeric_law(pm, p, q, C, P)
    h = hamiltonian_array(np.linspace(bnd.u_min, bnd.u_max, 2001), q, p, pm, C, P, M1)
    assert d.hamiltonian_value <= h.min() + 1e-9
    assert bnd.u_min <= d.i_opt <= bnd.u_max


@settings(max_examples=300, deadline=None)
@given(pm_values, costates, st.floats(0.2, 0.9))
def test_numeric_law_on_degenerate_maps_matches_explicit(pm, p, q):
    flat = m2_equivalent(P)
    try:
        d = explicit_law_constrained(pm, p, C, flat)
    except InfeasibleDemand:
        return
    n = numeric_law(pm, p, q, C, flat, M1)
    assert abs(n.i_opt - d.i_opt) <= 0.01


@pytest.mark.parametrize("pm,p", [(30e3, -12.0), (30e3, 9.0), (55e3, 0.0), (10e3, -8.0)])
def test_hamiltonian_is_convex_inside_engine_on_regions(pm, p):
    bnd = input_bounds(pm, 0.5, P.battery, P.egu, M2)
    i = np.linspace(bnd.u_min, bnd.u_max, 4001)
    p_r = pm - (355.0 - 0.5 * i) * i
    h = hamiltonian_array(i, 0.5, p, pm, C, P, M2)
    for side in (i < 0, i > 0):
        keep = side & (p_r > 1.0)
        hs = h[keep]
        if hs.size >= 3:
            assert np.all(np.diff(hs, 2) >= -1e-9)


# ---------------------------------------------------------------- adjoint ---

def test_adjoint_constant_without_state_dependence():
    flat = replace(P, battery=replace(P.battery, ocv_slope=0.0, ocv_offset=355.0))
    for i in (-80.0, 0.0, 40.0):
        assert adjoint_step(-3.0, 0.6, i, 1.0, C, flat, p_m=20e3) == -3.0


def test_adjoint_constant_under_the_simplified_model():
    assert adjoint_step(2.5, 0.4, 60.0, 1.0, C, P, p_m=30e3, fidelity=M2) == 2.5


def test_adjoint_step_for_a_linear_severity():
    c = 0.8
    lin = replace(P, battery=replace(P.battery, ocv_slope=0.0, ocv_offset=355.0,
                                     sigma_map=lambda q, i: 1.0 + c * np.asarray(q)))
    dt, i = 1.0, -50.0
    got = adjoint_step(0.0, 0.5, i, dt, C, lin, p_m=0.0)
    assert got == pytest.approx(-dt * C.beta * 355.0 * abs(i) * c / 2000.0, rel=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.25, 0.85), st.floats(5.0, 100.0), st.sampled_from([-1.0, 1.0]),
       st.floats(0.0, 40e3))
def test_finite_difference_gradients_match_analytic(q, mag, sign, pm):
    maps = PolynomialMaps()
    p = maps.apply(P)
    b = p.battery
    i = sign * mag
    p_r = pm - (b.ocv_slope * q + b.ocv_offset - b.resistance * i) * i
    if not 1.0 < p_r < p.egu.p_max:
        return
    ds, df = adjoint_gradients(q, i, pm, p)
    assert ds == pytest.approx(maps.dsigma_dq(q), rel=1e-4)
    assert df == pytest.approx(maps.dfuel_dq(q, i, pm, b), rel=1e-4)


def test_gradient_stencil_is_one_sided_at_the_edge():
    ds, _ = adjoint_gradients(1.0, 10.0, 0.0, PolynomialMaps().apply(P))
    maps = PolynomialMaps()
    assert ds == pytest.approx((maps.sigma(1.0, 10.0) - maps.sigma(0.999, 10.0)) / 1e-3)


def test_adjoint_state_validation():
    with pytest.raises(ValueError):
        AdjointState(p=1.0)
    assert AdjointState(1.0, AdjointMode.CONSTANT_VALUE).p == 1.0


# ------------------------------------------------------------ closed loop ---

@pytest.mark.parametrize("policy", ["explicit", "candidate", "numeric"])
def test_parked_vehicle_costs_nothing(policy):
    run = run_policy(policy, _zero_trace(30), params=P)
    assert run.cost == 0.0 and run.fuel_g == 0.0
    assert np.all(run.q == P.q0)


@pytest.mark.parametrize("policy", ["explicit", "candidate", "numeric"])
def test_closed_loop_respects_physics(policy, short_demand, params):
    run = run_policy(policy, short_demand, params=params)
    assert np.all(run.power_residual() <= 1e-9)
    assert np.all((run.q >= 0.2) & (run.q <= 0.9))
    assert np.all(np.diff(run.xi) >= 0) and np.all(np.diff(run.fuel_cum) >= 0)


def test_explicit_and_candidate_runs_coincide(short_demand, params):
    a = run_policy("explicit", short_demand, params=params)
    b = run_policy("candidate", short_demand, params=params)
    np.testing.assert_array_equal(a.i_b, b.i_b)


def test_integrated_costate_is_recorded(short_demand, params):
    run = run_policy("numeric", short_demand, params=params,
                     adjoint=AdjointState(0.0, AdjointMode.INTEGRATED))
    assert run.costate.shape == (len(short_demand) + 1,)
    const = run_policy("numeric", short_demand, params=params,
                       adjoint=AdjointState(1.5, AdjointMode.CONSTANT_VALUE))
    assert np.all(const.costate == 1.5)


def test_costate_variation_vanishes_without_state_dependence(short_demand):
    flat = replace(P, battery=replace(P.battery, ocv_slope=0.0, ocv_offset=355.0))
    run = run_policy("numeric", short_demand, params=flat)
    assert costate_variation(run, C, flat) == 0.0


def test_unknown_policy(short_demand):
    with pytest.raises(ValueError, match="unknown policy"):
        run_policy("oracle", short_demand)


def test_region_map_export(tmp_path):
    rows = region_map([-10e3, 0.0, 40e3, 100e3], [-12.0, 0.0, 9.0], C, P)
    assert len(rows) == 12
    assert {r[2] for r in rows if r[0] == 100e3} == {0}
    write_region_map(tmp_path / "m.csv", rows)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "P_m_W,p,region_id,i_opt_A"
    assert len(lines) == 13
