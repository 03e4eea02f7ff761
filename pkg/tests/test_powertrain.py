import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hevcost.maps import Table1D
from hevcost.oracles import m2_equivalent
from hevcost.params import builtin_path
from hevcost.powertrain import (
    BatteryParams, BatteryState, EguParams, Fidelity, InfeasibleDemand, battery_power,
    battery_step, current_for_power, fuel_grams_to_litres, fuel_power, input_bounds, ocv,
    severity,
)
from hevcost.maps import load_table2d

M1, M2 = Fidelity.M1, Fidelity.M2
B = BatteryParams()
E = EguParams()


def test_ocv():
    assert ocv(0.5, B, M1) == 355.0
    assert ocv(0.13, B, M2) == 355.0
    assert ocv(0.0, B, M1) == B.ocv_offset
    with pytest.raises(ValueError):
        ocv(1.2, B, M1)


def test_capacity_in_coulombs():
    assert B.capacity() == 234000.0
    assert B.capacity(1.0) == pytest.approx(0.8 * 234000.0)


def test_zero_current_leaves_state_unchanged():
    s = BatteryState(0.5, 0.1)
    n = battery_step(s, 0.0, 1.0, B)
    assert (n.soc, n.soh, n.out_of_bounds) == (0.5, 0.1, False)


def test_one_hour_at_one_c_drains_full_capacity():
    n = battery_step(BatteryState(0.5), 65.0, 3600.0, B)
    assert n.soc == pytest.approx(-0.5, abs=1e-12)
    assert n.out_of_bounds


def test_soh_increment_per_second():
    n = battery_step(BatteryState(0.5), 65.0, 1.0, B)
    assert n.soh == pytest.approx(65.0 / (2000 * 234000.0), rel=1e-12)
    assert n.soh == pytest.approx(1.389e-7, rel=1e-3)
    # an hour at C/2 moves half the capacity: 1 / (2 N_b)
    s = BatteryState(0.9)
    for _ in range(3600):
        s = battery_step(s, 65.0 / 2, 1.0, B)
    assert s.soh == pytest.approx(1 / (2 * 2000), rel=1e-9)


def test_soh_feedback_shrinks_capacity():
    s = BatteryState(0.5, 0.5)
    fixed = battery_step(s, 50.0, 10.0, B)
    faded = battery_step(s, 50.0, 10.0, B, soh_feedback=True)
    assert faded.soc < fixed.soc
    assert 0.5 - faded.soc == pytest.approx(500.0 / (234000.0 * 0.9))


def test_severity():
    assert severity(0.3, 40.0, B, M2) == 1.0
    flat = load_table2d(builtin_path("maps/sigma_flat.csv"), "q_b", "i_b_A", "sigma")
    assert severity(0.77, -120.0, replace(B, sigma_map=flat), M1) == 1.0
    ill = load_table2d(builtin_path("maps/sigma_illustrative.csv"), "q_b", "i_b_A", "sigma")
    bm = replace(B, sigma_map=ill)
    assert severity(0.2, 130.0, bm, M1) == ill(0.2, 130.0)
    # clamped beyond the map edge
    assert severity(0.2, 5000.0, bm, M1) == ill(0.2, ill.b[-1])
    assert severity(0.2, 130.0, bm, M2) == 1.0


def test_fuel_power_engine_off():
    assert fuel_power(0.0, E, M1) == (0.0, 0.0)
    assert fuel_power(0.0, E, M2) == (0.0, 0.0)


def test_fuel_power_affine():
    pf, mdot = fuel_power(10e3, E, M2)
    assert pf == pytest.approx(39910.0)
    assert mdot == pytest.approx(39910.0 / 47000.0)
    assert mdot == pytest.approx(0.849, abs=5e-4)


def test_fuel_power_from_map():
    eta = Table1D([1e3, 10e3, 20e3], [0.2, 0.25, 0.3])
    pf, _ = fuel_power(10e3, replace(E, eta_map=eta), M1)
    assert pf == pytest.approx(40e3)


def test_fuel_power_range_checked():
    with pytest.raises(ValueError):
        fuel_power(-1.0, E, M1)
    with pytest.raises(ValueError):
        fuel_power(26e3, E, M1)


def test_input_bounds_quadratic_root():
    # v_oc = 355 V at q = 0.5 under M1; P_max = 50 kW binds
    bnd = input_bounds(60e3, 0.5, B, E, M1)
    assert bnd.p_max == 50e3
    ref = 355.0 - math.sqrt(355.0 ** 2 - 100000.0)
    assert ref == pytest.approx(193.68, abs=0.01)
    assert bnd.u_max == pytest.approx(ref, rel=1e-12)


def test_zero_demand_can_only_recharge_or_idle():
    bnd = input_bounds(0.0, 0.5, B, E, M1)
    assert bnd.u_max <= 0.0
    assert bnd.u_min < 0.0


def test_excess_demand_is_infeasible():
    with pytest.raises(InfeasibleDemand):
        input_bounds(80e3, 0.5, B, E, M1)


def test_litres_use_the_listed_density():
    assert fuel_grams_to_litres(1000.0, E) == pytest.approx(5.0)


def test_invalid_params():
    with pytest.raises(ValueError):
        BatteryParams(resistance=0.0)
    with pytest.raises(ValueError):
        BatteryParams(p_min=10.0)
    with pytest.raises(ValueError):
        EguParams(p_min=30e3)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(-60e3, 60e3))
def test_circuit_round_trip(q, p):
    v = ocv(q, B, M1)
    if p > v * v / (4 * B.resistance):
        assert math.isnan(current_for_power(p, v, B.resistance))
        return
    i = current_for_power(p, v, B.resistance)
    assert abs(battery_power(i, v, B.resistance) - p) <= 1e-9 * max(abs(p), 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.2, 0.9), st.floats(-300, 300).filter(lambda i: abs(i) > 1e-6))
def test_soc_and_soh_monotonicity(q, i):
    s = BatteryState(q, 0.01)
    n = battery_step(s, i, 1.0, B)
    assert (n.soc < q) if i > 0 else (n.soc > q)
    assert n.soh >= s.soh


@settings(max_examples=300, deadline=None)
@given(st.floats(-60e3, 80e3), st.floats(0.0, 1.0))
def test_current_bound_below_parabola_vertex(pm, q):
    try:
        bnd = input_bounds(pm, q, B, E, M1)
    except InfeasibleDemand:
        return
    v = ocv(q, B, M1)
    assert bnd.u_min <= bnd.u_max <= v / (2 * B.resistance)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(-100, 100), st.floats(-40e3, 70e3))
def test_degenerate_full_model_equals_simplified(q, i, pm):
    from hevcost.params import PowertrainParams
    P = m2_equivalent(PowertrainParams())
    b, e = P.battery, P.egu
    assert ocv(q, b, M1) == ocv(q, b, M2)
    assert severity(q, i, b, M1) == severity(q, i, b, M2)
    pr = float(np.clip(pm, 0.0, e.p_max))
    assert fuel_power(pr, e, M1) == fuel_power(pr, e, M2)
    try:
        b1 = input_bounds(pm, q, b, e, M1)
    except InfeasibleDemand:
        with pytest.raises(InfeasibleDemand):
            input_bounds(pm, q, b, e, M2)
        return
    assert b1 == input_bounds(pm, q, b, e, M2)
