import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hevcost.ocp import CostCoefficients, OcpSpec, Strategy, Terminal, stage_cost
from hevcost.oracles import m2_equivalent
from hevcost.params import PowertrainParams
from hevcost.powertrain import Fidelity, current_for_power

COEFFS = CostCoefficients.nominal()


@pytest.mark.parametrize("strategy", list(Strategy))
def test_null_action_is_free(params, strategy):
    assert stage_cost(strategy, 0.5, 0.0, 0.0, COEFFS, params) == 0.0


def test_tcms_stage_cost_by_hand():
    p = PowertrainParams(fidelity=Fidelity.M2)
    i = 100.0
    pm = (355.0 - 0.5 * i) * i    # battery covers all: engine off
    got = stage_cost(Strategy.TCMS, 0.5, i, pm, COEFFS, p, dt=1.0)
    alpha, beta = 0.2 / 3.6e6, 500 / 3.6e6
    grid = alpha * 355 * 100
    wear = beta * 355 * 100 / 2000
    assert grid == pytest.approx(1.972e-3, rel=1e-3)
    assert wear == pytest.approx(2.465e-3, rel=1e-3)
    assert got == pytest.approx(grid + wear, rel=1e-12)


def test_recharging_credits_grid_energy():
    p = PowertrainParams(fidelity=Fidelity.M2)
    c = stage_cost(Strategy.TCMS, 0.5, -20.0, 10e3, CostCoefficients.from_kwh(0.2, 0, 0), p)
    assert c < 0


@pytest.mark.parametrize("strategy", [Strategy.FE, Strategy.CS, Strategy.ECMS])
def test_fuel_strategies_ignore_current_with_engine_off(params, strategy):
    for i in (-40.0, 0.0, 60.0):
        v = params.battery.ocv_slope * 0.5 + params.battery.ocv_offset
        pm = (v - params.battery.resistance * i) * i
        assert stage_cost(strategy, 0.5, i, pm, COEFFS, params) == 0.0


def test_fuel_strategy_counts_grams(params):
    p = PowertrainParams(fidelity=Fidelity.M2)
    g = stage_cost(Strategy.FE, 0.5, 0.0, 10e3, COEFFS, p)
    assert g == pytest.approx(39910.0 / 47000.0)


def test_infeasible_current_rejected(params):
    with pytest.raises(ValueError):
        stage_cost(Strategy.TCMS, 0.5, 200.0, 0.0, COEFFS, params)


def test_terminal_kinds():
    assert OcpSpec(Strategy.CS).terminal is Terminal.FIXED
    assert OcpSpec(Strategy.ECMS).terminal is Terminal.LINEAR_PENALTY
    assert OcpSpec(Strategy.FE).terminal is Terminal.FREE
    assert OcpSpec(Strategy.TCMS).terminal is Terminal.FREE
    assert OcpSpec(Strategy.TCMS).q_bounds == (0.2, 0.9)
    with pytest.raises(ValueError):
        OcpSpec(Strategy.TCMS, q0=0.95)


def test_spec_zeta_overrides_coefficients():
    c = CostCoefficients.from_kwh(0, 0, 0, zeta=12.0)
    assert OcpSpec(Strategy.ECMS).zeta_value(c) == 12.0
    assert OcpSpec(Strategy.ECMS, zeta=-3.0).zeta_value(c) == -3.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.2, 0.9), st.floats(-20e3, 70e3), st.floats(0.0, 1.0))
def test_full_and_simplified_costs_agree_on_degenerate_maps(q, pm, frac):
    p = m2_equivalent(PowertrainParams())
    b = p.battery
    # pick a current that keeps the generator inside its range
    lo = current_for_power(max(b.p_min, pm - p.egu.p_max), b.v_nom, b.resistance)
    hi = current_for_power(min(b.p_max, pm, b.v_nom ** 2 / (4 * b.resistance)), b.v_nom, b.resistance)
    if not lo <= hi:
        return
    i = lo + frac * (hi - lo)
    for s in Strategy:
        a = stage_cost(s, q, i, pm, COEFFS, p, fidelity=Fidelity.M1)
        c = stage_cost(s, q, i, pm, COEFFS, p, fidelity=Fidelity.M2)
        assert a == pytest.approx(c, rel=1e-12, abs=1e-15)


def test_vectorised_stage_cost(params):
    i = np.array([-10.0, 0.0, 10.0])
    out = stage_cost(Strategy.TCMS, 0.5, i, 20e3, COEFFS, params)
    assert out.shape == (3,)
    for k in range(3):
        assert out[k] == stage_cost(Strategy.TCMS, 0.5, float(i[k]), 20e3, COEFFS, params)
