from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ictrade.matching import (BUYER, ELECTRICITY, GAS, SELLER, Order, PriceCorridor, ask_price, bid_price,
                              blocking_pairs, generate_orders, match, settle_trades)

from oracles import stable

CORR = PriceCorridor(ceiling=1.0, floor=0.4)


def test_no_desired_trades_no_orders():
    assert generate_orders({1: {"xeb": 0.0, "xes": 0.0}}, {ELECTRICITY: CORR}) == []


def test_bid_and_ask():
    assert bid_price(CORR, 0.75) == pytest.approx(0.85)
    assert ask_price(CORR, 0.25) == pytest.approx(0.55)
    orders = generate_orders({1: {"xeb": 2.0}, 2: {"xes": 2.0}}, {ELECTRICITY: CORR})
    assert [(o.ic_id, o.side, o.price) for o in orders] == [(1, BUYER, pytest.approx(0.85)),
                                                            (2, SELLER, pytest.approx(0.55))]


def test_single_pair():
    orders = [Order(1, BUYER, ELECTRICITY, 2.0, 0.85), Order(2, SELLER, ELECTRICITY, 3.0, 0.55)]
    res = match(orders)
    assert len(res.matches) == 1
    m = res.matches[0]
    assert (m.buyer, m.seller, m.quantity) == (1, 2, 2.0)
    assert m.price == pytest.approx(0.70)
    assert res.residual[(2, SELLER, ELECTRICITY)] == pytest.approx(1.0)
    money = settle_trades(res)
    assert money[1] == (pytest.approx(1.40), 0.0)
    assert money[2] == (0.0, pytest.approx(1.40))


def test_no_overlap_no_trade():
    orders = [Order(1, BUYER, ELECTRICITY, 2.0, 0.5), Order(2, SELLER, ELECTRICITY, 3.0, 0.6)]
    res = match(orders)
    assert res.matches == [] and settle_trades(res) == {}


def test_restricted_commodity_needs_a_pipeline():
    orders = [Order(1, BUYER, GAS, 2.0, 0.9), Order(2, SELLER, GAS, 3.0, 0.5), Order(3, SELLER, GAS, 3.0, 0.4)]
    res = match(orders, pair_caps={(1, 2, GAS): 1.5}, restricted=[GAS])
    assert [(m.seller, m.quantity) for m in res.matches] == [(2, 1.5)]


def test_self_trade_excluded_and_duplicates_rejected():
    res = match([Order(1, BUYER, ELECTRICITY, 1.0, 0.9), Order(1, SELLER, ELECTRICITY, 1.0, 0.5)])
    assert res.matches == []
    with pytest.raises(ValueError):
        match([Order(1, BUYER, ELECTRICITY, 1.0, 0.9), Order(1, BUYER, ELECTRICITY, 2.0, 0.9)])
    with pytest.raises(ValueError):
        Order(1, "broker", ELECTRICITY, 1.0, 0.5)


@st.composite
def instance(draw, max_side=4):
    nb = draw(st.integers(1, max_side))
    ns = draw(st.integers(1, max_side))
    seed = draw(st.integers(0, 2 ** 31))
    rng = np.random.default_rng(seed)
    orders = [Order(i + 1, BUYER, ELECTRICITY, float(rng.uniform(0.1, 3.0)), float(rng.uniform(0.4, 1.0)))
              for i in range(nb)]
    orders += [Order(nb + j + 1, SELLER, ELECTRICITY, float(rng.uniform(0.1, 3.0)), float(rng.uniform(0.4, 1.0)))
               for j in range(ns)]
    caps = {}
    if draw(st.booleans()):
        for i in range(nb):
            for j in range(ns):
                if rng.random() < 0.5:
                    caps[(i + 1, nb + j + 1, ELECTRICITY)] = float(rng.uniform(0.0, 2.0))
    return orders, caps, seed


def check_outcome(orders, caps, res):
    by = {(o.ic_id, o.side): o for o in orders}
    bought, sold = defaultdict(float), defaultdict(float)
    for m in res.matches:
        b, s = by[(m.buyer, BUYER)], by[(m.seller, SELLER)]
        assert s.price - 1e-12 <= m.price <= b.price + 1e-12
        assert m.quantity > 0
        bought[m.buyer] += m.quantity
        sold[m.seller] += m.quantity
        assert m.quantity <= caps.get((m.buyer, m.seller, ELECTRICITY), np.inf) + 1e-9
    for i, q in bought.items():
        assert q <= by[(i, BUYER)].quantity + 1e-9
    for j, q in sold.items():
        assert q <= by[(j, SELLER)].quantity + 1e-9
    assert sum(bought.values()) == pytest.approx(sum(sold.values()), abs=1e-12)
    money = settle_trades(res)
    assert abs(sum(c for c, _ in money.values()) - sum(r for _, r in money.values())) <= 1e-9
    assert res.rounds <= len(orders) ** 2


@settings(max_examples=300, deadline=None)
@given(instance())
def test_stable_and_rational(inst):
    orders, caps, seed = inst
    res = match(orders, np.random.default_rng(seed), pair_caps=caps)
    check_outcome(orders, caps, res)
    assert stable(orders, res.matches, caps) == []
    assert blocking_pairs(orders, res, caps) == []


@settings(max_examples=100, deadline=None)
@given(instance(max_side=3))
def test_three_by_three_oracle(inst):
    orders, caps, seed = inst
    # any stable outcome is accepted; the outcome must not depend on the proposal order either
    a = match(orders, np.random.default_rng(seed), pair_caps=caps)
    b = match(orders, np.random.default_rng(seed + 1), pair_caps=caps)
    assert stable(orders, a.matches, caps) == [] and stable(orders, b.matches, caps) == []


def test_oracle_detects_a_blocking_pair():
    from ictrade.matching import Match
    orders = [Order(1, BUYER, ELECTRICITY, 1.0, 0.9), Order(2, SELLER, ELECTRICITY, 1.0, 0.5),
              Order(3, SELLER, ELECTRICITY, 1.0, 0.7)]
    # buyer 1 buys from the dearer seller while the cheaper one sits idle
    bad = [Match(1, 3, ELECTRICITY, 1.0, 0.8)]
    assert stable(orders, bad) == [(1, 2)]


def test_deterministic_for_seed():
    rng = np.random.default_rng(3)
    orders = [Order(i, BUYER, ELECTRICITY, float(rng.uniform(0.5, 2)), 0.85) for i in (1, 2)]
    orders += [Order(i, SELLER, ELECTRICITY, float(rng.uniform(0.5, 2)), 0.55) for i in (3, 4)]
    a = match(orders, np.random.default_rng(11))
    b = match(orders, np.random.default_rng(11))
    assert a.matches == b.matches
