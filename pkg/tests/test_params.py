import pytest

from hevcost.maps import Table1D, Table2D
from hevcost.ocp import CostCoefficients
from hevcost.params import (
    PowertrainParams, default_params, load_params, params_from_dict, parse_kv, read_kv_file,
)
from hevcost.powertrain import Fidelity


def test_defaults_carry_the_parameter_table(params):
    b, e, c = params.battery, params.egu, params.costs
    assert (b.ocv_slope, b.ocv_offset, b.v_nom, b.resistance) == (70.0, 320.0, 355.0, 0.5)
    assert b.q_nom == 234000.0 and b.n_cycles == 2000.0
    assert (b.p_min, b.p_max, b.q_min, b.q_max) == (-50e3, 50e3, 0.2, 0.9)
    assert (e.a_r, e.b_r, e.lhv, e.p_max) == (3.43, 5610.0, 47e3, 25e3)
    assert c.per_kwh() == pytest.approx((0.2, 500.0, 0.077))
    assert c.gamma == pytest.approx(0.077 / 3.6e6)
    assert isinstance(e.eta_map, Table1D)
    assert isinstance(b.sigma_map, Table2D) and b.sigma_map.is_flat()
    assert params.fidelity is Fidelity.M1 and params.q0 == 0.5


def test_parse_kv_comments_and_errors():
    assert parse_kv("a = 1  # note\n\n# skip\nb=x y\n") == {"a": "1", "b": "x y"}
    with pytest.raises(ValueError, match=":2:"):
        parse_kv("a = 1\nnonsense\n")


def test_include_and_override(tmp_path):
    (tmp_path / "base.params").write_text("A_b = 10\nB_b = 300\n", encoding="utf-8")
    (tmp_path / "top.params").write_text("include = base.params\nA_b = 20\n", encoding="utf-8")
    p = load_params(tmp_path / "top.params")
    assert p.battery.ocv_slope == 20.0
    assert p.battery.ocv_offset == 300.0


def test_include_cycle_detected(tmp_path):
    (tmp_path / "a.params").write_text("include = b.params\n", encoding="utf-8")
    (tmp_path / "b.params").write_text("include = a.params\n", encoding="utf-8")
    with pytest.raises(ValueError, match="include cycle"):
        read_kv_file(tmp_path / "a.params")


def test_relative_paths_resolve_inside_lists(tmp_path):
    sub = tmp_path / "sub"
    sub.mkdir()
    (sub / "x.cfg").write_text("cycles = urban, mine.csv\n", encoding="utf-8")
    kv = read_kv_file(sub / "x.cfg")
    first, second = (s.strip() for s in kv["cycles"].split(","))
    assert first == "urban"
    assert second == str((sub / "mine.csv").resolve())


def test_map_keys(tmp_path):
    (tmp_path / "eta.csv").write_text("P_r_W,eta\n1000,0.2\n20000,0.3\n", encoding="utf-8")
    p = params_from_dict(read_kv_file(_write(tmp_path / "p.params",
                                             "eta_r_map = eta.csv\nsigma_map = none\n")))
    assert p.egu.eta_map(10500.0) == pytest.approx(0.25)
    assert p.battery.sigma_map is None
    ill = params_from_dict({"sigma_map": "builtin:sigma_illustrative"})
    assert not ill.battery.sigma_map.is_flat()


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_costs_converted_to_per_joule():
    p = params_from_dict({"gamma_EUR_per_kWh": "0.23", "fidelity": "m2", "q_b_init": "0.6"})
    assert p.costs.gamma == pytest.approx(0.23 / 3.6e6)
    assert p.fidelity is Fidelity.M2
    assert p.q0 == 0.6


def test_sweep_helpers_keep_nominal_voltage():
    p = PowertrainParams().with_ocv_slope(140.0)
    assert p.battery.ocv_slope * 0.5 + p.battery.ocv_offset == pytest.approx(355.0)
    assert PowertrainParams().with_fuel_price(0.1).costs.gamma == pytest.approx(0.1 / 3.6e6)


def test_cost_coefficients_validate():
    with pytest.raises(ValueError):
        CostCoefficients.from_kwh(-0.1, 0, 0)
    with pytest.raises(ValueError):
        CostCoefficients.from_kwh(0.1, 0, 0, eta_grid=0.0)


def test_default_params_load_identically_twice():
    a, b = default_params(), default_params()
    assert a.battery.ocv_slope == b.battery.ocv_slope
    assert (a.egu.eta_map.y == b.egu.eta_map.y).all()
