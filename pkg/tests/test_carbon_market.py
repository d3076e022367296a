import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ictrade.carbon_market import (BandOverflowError, CarbonPosition, band_index, ladder_cost,
                                   marginal_carbon_price, max_marginal_price, settle_day)
from ictrade.model import CarbonLadder

from oracles import ladder_integral

LAD = CarbonLadder(p_c=100.0, alpha=1.0, beta=1.0, l=5.0, K=4)
RANGE = (LAD.K + 1) * LAD.l


def cost(dev, lad=LAD):
    return ladder_cost(CarbonPosition(0.0, dev), lad)


def test_examples():
    assert cost(0.0) == 0.0
    assert cost(7.0) == pytest.approx(900.0, abs=1e-9)
    assert cost(-7.0) == pytest.approx(-900.0, abs=1e-9)


def test_marginal_examples():
    assert marginal_carbon_price(CarbonPosition(10, 12), LAD) == 100.0
    assert marginal_carbon_price(CarbonPosition(10, 17), LAD) == 200.0
    assert marginal_carbon_price(CarbonPosition(22, 10), LAD) == 300.0
    h = 1e-3
    assert (cost(7 + h) - cost(7 - h)) / (2 * h) == pytest.approx(200.0, rel=1e-9)
    assert (cost(-12 + h) - cost(-12 - h)) / (2 * h) == pytest.approx(300.0, rel=1e-9)


def test_settle_day_examples():
    pos = {1: CarbonPosition(20, 27), 2: CarbonPosition(20, 13), 3: CarbonPosition(20, 22), 4: CarbonPosition(20, 20)}
    out = settle_day(pos, LAD)
    assert out == pytest.approx({1: 900.0, 2: -900.0, 3: 200.0, 4: 0.0}, abs=1e-9)
    assert all(p.actual == 0.0 for p in pos.values())
    zero = settle_day({i: CarbonPosition(5, 5) for i in range(3)}, LAD)
    assert zero == {0: 0.0, 1: 0.0, 2: 0.0}


def test_band_edges():
    assert band_index(5.0, LAD) == 0
    assert band_index(5.0 + 1e-9, LAD) == 1
    assert band_index(-5.0, LAD) == -1
    assert band_index(-5.0 + 1e-9, LAD) == 0
    assert band_index(RANGE, LAD) == LAD.K
    assert band_index(-RANGE + 1e-9, LAD) == -LAD.K


def test_overflow():
    with pytest.raises(BandOverflowError):
        cost(RANGE + 0.1)
    with pytest.raises(BandOverflowError):
        cost(-RANGE - 0.1)


def test_max_marginal():
    assert max_marginal_price(LAD) == 500.0


@settings(max_examples=500, deadline=None)
@given(st.floats(-RANGE + 1e-6, RANGE), st.floats(0.5, 3.0), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_matches_integration_oracle(dev, l, a, b):
    lad = CarbonLadder(p_c=80.0, alpha=a, beta=b, l=l, K=4)
    dev = float(np.clip(dev * l / 5.0, -(lad.K + 1) * l + 1e-9, (lad.K + 1) * l))
    got = cost(dev, lad)
    assert got == pytest.approx(ladder_integral(dev, 80.0, l, a, b, 4), abs=1e-9 * max(1.0, abs(got)))


@settings(max_examples=300, deadline=None)
@given(st.integers(-4, 5), st.booleans())
def test_continuous_at_band_edges(k, _):
    edge = k * LAD.l
    if abs(edge) >= RANGE:
        edge = np.sign(edge) * (RANGE - 1e-6)
    lo, hi = cost(edge - 1e-9), cost(edge + 1e-9)
    assert abs(hi - lo) <= 1e-9 * LAD.p_c * (1 + LAD.K) * 2 + 1e-12


def spaced(points, gap=1e-3):
    out = []
    for p in sorted(points):
        if not out or p - out[-1] >= gap:
            out.append(p)
    return out


def slopes(devs):
    return [(cost(b) - cost(a)) / (b - a) for a, b in zip(devs, devs[1:])]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, RANGE), min_size=3, max_size=12, unique=True))
def test_penalty_side_slopes_nondecreasing(points):
    devs = spaced(points)
    s = slopes(devs)
    assert all(b >= a - 1e-6 for a, b in zip(s, s[1:]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-RANGE + 1e-6, 0.0), min_size=3, max_size=12, unique=True))
def test_reward_side_slopes_grow_as_actual_falls(points):
    devs = spaced(points)[::-1]
    s = [(cost(a) - cost(b)) / (a - b) for a, b in zip(devs, devs[1:])]
    assert all(b >= a - 1e-6 for a, b in zip(s, s[1:]))


def test_not_globally_convex():
    # the reward side steepens to the left of -l, so a chord across it lies below the curve
    left = cost(-10.0)
    mid = cost(-5.0)
    right = cost(0.0)
    assert mid > 0.5 * (left + right)


@settings(max_examples=300, deadline=None)
@given(st.floats(-RANGE + 0.01, RANGE - 0.01))
def test_marginal_equals_finite_difference(dev):
    h = 1e-4
    k_lo, k_hi = band_index(dev - h, LAD), band_index(dev + h, LAD)
    if k_lo != k_hi:
        return  # straddles an edge
    fd = (cost(dev + h) - cost(dev - h)) / (2 * h)
    assert marginal_carbon_price(CarbonPosition(0.0, dev), LAD) == pytest.approx(fd, abs=1e-6 * LAD.p_c)
