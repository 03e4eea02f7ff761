import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hevcost.cycle import (
    CycleError, DrivingCycle, builtin_cycle, concat_cycles, load_cycle, resample_cycle,
    resolve_cycle, save_cycle,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_three_rows_without_slope_default_to_flat(tmp_path):
    c = load_cycle(_write(tmp_path / "c.csv", "t_s,v_mps\n0,0\n1,1\n2,2\n"))
    assert len(c) == 3
    assert np.all(c.slope == 0.0)
    assert c.ts == 1.0
    assert c.name == "c"


def test_slope_column_is_read(tmp_path):
    c = load_cycle(_write(tmp_path / "c.csv", "t_s,v_mps,slope_rad\n0,0,0.01\n1,1,0.02\n"))
    np.testing.assert_array_equal(c.slope, [0.01, 0.02])


@pytest.mark.parametrize("body, message", [
    ("0,0\n1,1\n3,2\n4,3\n6,4\n", "non-uniform"),
    ("0,0\n2,1\n1,2\n", "strictly increasing"),
    ("0,0\n1,-1\n2,0\n", "negative speed"),
    ("0,0\n1,nan\n2,0\n", "NaN"),
])
def test_invalid_files_are_rejected(tmp_path, body, message):
    with pytest.raises(CycleError, match=message):
        load_cycle(_write(tmp_path / "bad.csv", "t_s,v_mps\n" + body))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cycle(tmp_path / "nope.csv")


def test_wrong_header(tmp_path):
    with pytest.raises(CycleError, match="header"):
        load_cycle(_write(tmp_path / "h.csv", "time,speed\n0,0\n1,1\n"))


def test_non_uniform_file_accepted_when_resampling(tmp_path):
    path = _write(tmp_path / "nu.csv", "t_s,v_mps\n0,0\n1,1\n3,3\n4,4\n")
    c = load_cycle(path, resample_to=1.0)
    np.testing.assert_allclose(c.t, [0, 1, 2, 3, 4])
    np.testing.assert_allclose(c.speed, [0, 1, 2, 3, 4])


def test_save_load_round_trip(tmp_path):
    c = DrivingCycle(np.arange(5.0), np.array([0, 1.5, 2.25, 1.0, 0]), np.full(5, 0.01), "x")
    save_cycle(c, tmp_path / "x.csv")
    back = load_cycle(tmp_path / "x.csv")
    np.testing.assert_array_equal(back.speed, c.speed)
    np.testing.assert_array_equal(back.slope, c.slope)


def test_shipped_cycles():
    udds = builtin_cycle("udds")
    assert len(udds) == 1370 and udds.ts == 1.0
    urban = builtin_cycle("urban")
    assert urban.name == "urban"
    # the urban alias is the full FTP-75 schedule (cold start, stabilised, hot start)
    assert urban.duration == 1874.0
    assert builtin_cycle("highway").duration == 765.0
    assert abs(udds.distance() / 1609.344 - 7.45) < 0.05
    assert resolve_cycle("hwfet").name == "hwfet"
    with pytest.raises(KeyError):
        builtin_cycle("nedc")


def test_concat_urban_highway():
    u, h = builtin_cycle("urban"), builtin_cycle("highway")
    c = concat_cycles(u, h, name="combined")
    assert c.name == "combined"
    assert len(c) == len(u) + len(h)
    # each sample covers one step, so the covered time adds up exactly
    assert len(c) * c.ts == len(u) * u.ts + len(h) * h.ts
    assert c.t[len(u)] == u.t[-1] + u.ts
    np.testing.assert_array_equal(np.diff(c.t), 1.0)
    assert builtin_cycle("combined").duration == c.duration


def test_concat_with_empty_is_identity():
    u = builtin_cycle("udds")
    assert concat_cycles(u, DrivingCycle.empty()) is u
    assert concat_cycles(DrivingCycle.empty(), u) is u


def test_concat_rejects_mismatched_steps():
    a = DrivingCycle(np.arange(3.0), np.ones(3), np.zeros(3))
    b = DrivingCycle(np.arange(3.0) * 0.1, np.ones(3), np.zeros(3))
    with pytest.raises(CycleError, match="mismatched"):
        concat_cycles(a, b)


def test_resample_identity_and_ramp():
    ramp = DrivingCycle(np.arange(11.0), np.arange(11.0), np.zeros(11), "ramp")
    assert resample_cycle(ramp, 1.0) is ramp
    half = resample_cycle(ramp, 0.5)
    assert len(half) == 21
    assert half.speed[1] == 0.5
    np.testing.assert_allclose(half.speed, half.t)
    assert half.t[0] == 0.0 and half.t[-1] == 10.0
    with pytest.raises(CycleError):
        resample_cycle(ramp, 0.0)


def test_resampled_urban_keeps_distance():
    u = builtin_cycle("urban")
    fine = resample_cycle(u, 0.1)
    assert abs(fine.distance() - u.distance()) <= 1e-3 * u.distance()


def test_cycle_arrays_are_read_only():
    c = builtin_cycle("udds")
    with pytest.raises(ValueError):
        c.speed[0] = 3.0


@st.composite
def cycles(draw, min_size=2, max_size=40):
    n = draw(st.integers(min_size, max_size))
    ts = draw(st.sampled_from([0.1, 0.5, 1.0, 2.0]))
    v = draw(st.lists(st.floats(0, 40, allow_nan=False), min_size=n, max_size=n))
    th = draw(st.lists(st.floats(-0.1, 0.1, allow_nan=False), min_size=n, max_size=n))
    return DrivingCycle(ts * np.arange(n), np.array(v), np.array(th))


@settings(max_examples=60, deadline=None)
@given(cycles(), st.sampled_from([0.25, 0.3, 0.7, 1.5]))
def test_resample_is_idempotent(c, h):
    if c.duration < h:
        with pytest.raises(CycleError, match="shorter"):
            resample_cycle(c, h)
        return
    once = resample_cycle(c, h)
    twice = resample_cycle(once, h)
    np.testing.assert_array_equal(once.t, twice.t)
    np.testing.assert_array_equal(once.speed, twice.speed)
    assert np.all(once.speed >= 0)


@settings(max_examples=60, deadline=None)
@given(cycles(), cycles())
def test_concat_preserves_sample_count(a, b):
    if abs(a.ts - b.ts) > 1e-12:
        with pytest.raises(CycleError):
            concat_cycles(a, b)
        return
    c = concat_cycles(a, b)
    assert len(c) == len(a) + len(b)
    np.testing.assert_allclose(np.diff(c.t), a.ts)


@settings(max_examples=40, deadline=None)
@given(cycles())
def test_loaded_cycles_satisfy_invariants(tmp_path_factory, c):
    path = tmp_path_factory.mktemp("cyc") / "c.csv"
    save_cycle(c, path)
    back = load_cycle(path)
    assert len(back) >= 2
    assert np.all(np.diff(back.t) > 0)
    assert np.all(back.speed >= 0)
    np.testing.assert_array_equal(back.speed, c.speed)
