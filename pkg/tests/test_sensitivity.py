import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import random_pwl
from vbid.errors import InfeasibleBounds, InvalidPwl, OutOfDomain, ParseError
from vbid.sensitivity import (
    PwlSensitivity,
    SensitivityBounds,
    check,
    default_big_m,
    flat_pwl,
    read_pwl_csv,
    shift_at,
    shifted_nodal_spread,
    validate,
    write_pwl_csv,
)


def test_single_segment():
    pwl = PwlSensitivity(0, [-10.0], [-0.2], [0.0], -10.0, 10.0)
    assert shift_at(pwl, 5.0) == -1.0
    assert shift_at(pwl, 0.0) == 0.0
    assert shifted_nodal_spread(6.25, pwl, 0.0) == 6.25


def test_nodal_translation():
    pwl = PwlSensitivity(0, [-10.0], [-0.1], [0.0], -10.0, 10.0)
    assert shifted_nodal_spread(6.25, pwl, 5.0) == 5.75
    base = np.array([6.25, -1.0, 3.5])
    for x in (-10.0, -3.0, 0.0, 7.5):
        out = shifted_nodal_spread(base, pwl, x)
        assert np.ptp(out) == pytest.approx(np.ptp(base), abs=1e-12)


def test_wide_bounds_include_endpoints():
    b = SensitivityBounds(-7812.0, 6821.0)
    pwl = flat_pwl(3, b.x_lo, b.x_hi)
    assert shift_at(pwl, 6821.0) == 0.0
    with pytest.raises(OutOfDomain):
        shift_at(pwl, 6821.5)
    with pytest.raises(OutOfDomain):
        shift_at(pwl, -7813.0)
    with pytest.raises(InfeasibleBounds):
        SensitivityBounds(1.0, 5.0)


def test_from_history_straddles_zero():
    b = SensitivityBounds.from_history([3.0, 8.0])
    assert (b.x_lo, b.x_hi) == (-1.0, 8.0)


def test_half_open_boundary():
    pwl = PwlSensitivity(0, [-4.0, 0.0], [0.0, -1.0], [0.0, 0.0], -4.0, 4.0)
    assert pwl.segment_of(0.0) == 1
    assert pwl.segment_of(4.0) == 1
    assert pwl.segment_of(-4.0) == 0


def test_validate_messages():
    assert validate(PwlSensitivity(0, [-5.0, 0.0], [0.0, 0.1], [0.0, 0.0], -5.0, 5.0)) == ["positive slope at 1"]
    msgs = validate(PwlSensitivity(0, [-5.0, 1.0], [0.0, -1.0], [0.0, 1.0 + 1e-3], -5.0, 5.0))
    assert any(m.startswith("continuity") for m in msgs)
    msgs = validate(PwlSensitivity(0, [-5.0], [-1.0], [2.0], -5.0, 5.0))
    assert any("shift at zero" in m for m in msgs)
    with pytest.raises(InvalidPwl):
        check(PwlSensitivity(0, [-4.0], [0.5], [0.0], -4.0, 4.0))


def test_big_m_covers_products():
    # shift = -x on [-3, 2]: |x * shift| peaks at 9
    assert default_big_m([-3.0], [-1.0], [0.0], -3.0, 2.0) == 90.0
    pwl = PwlSensitivity(0, [-3.0], [-1.0], [0.0], -3.0, 2.0)
    assert pwl.big_m == 90.0


@given(st.integers(0, 2**32 - 1), st.lists(st.floats(-1, 1), min_size=2, max_size=20))
def test_random_pwl_properties(seed, us):
    pwl = random_pwl(np.random.default_rng(seed), 0)
    assert validate(pwl) == []
    xs = np.clip(np.sort(pwl.x_lo + (np.array(us) + 1) / 2 * (pwl.x_hi - pwl.x_lo)), pwl.x_lo, pwl.x_hi)
    vals = shift_at(pwl, xs)
    assert np.all(np.diff(vals) <= 1e-12)
    assert shift_at(pwl, 0.0) == 0.0
    seg = pwl.segment_of(xs)
    assert np.all((pwl.c[seg] <= xs) & (xs <= np.append(pwl.c[1:], pwl.x_hi)[seg]))


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    pwls = [random_pwl(rng, h) for h in range(3)]
    path = write_pwl_csv(pwls, tmp_path / "pwl.csv")
    back = read_pwl_csv(path)
    for p, q in zip(pwls, back):
        assert p.hour == q.hour and p.big_m == q.big_m and (p.x_lo, p.x_hi) == (q.x_lo, q.x_hi)
        for k in ("c", "a", "b"):
            np.testing.assert_array_equal(getattr(p, k), getattr(q, k))
    (tmp_path / "bad.csv").write_text("hour,j,c,a,b\n0,0,x,0,0\n")
    with pytest.raises(ParseError):
        read_pwl_csv(tmp_path / "bad.csv")
