"""Order generation and many-to-many matching of divisible energy trades.

Buyers rank sellers by ask (cheapest first), sellers rank buyers by bid
(highest first); ties go to the lower IC id. Matching is a buyer-proposing
deferred acceptance with divisible quantities: sellers hold the best proposals
up to their capacity and reject the rest, and rejected buyers move down their
list. The deal price of every matched pair is the midpoint of bid and ask.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

BUYER, SELLER = "buyer", "seller"
ELECTRICITY, GAS = "electricity", "gas"
QTY_EPS = 1e-12


class MatchingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Order:
    ic_id: int
    side: str
    commodity: str
    quantity: float
    price: float

    def __post_init__(self):
        if self.side not in (BUYER, SELLER):
            raise ValueError(f"unknown side {self.side!r}")
        if self.quantity < 0:
            raise ValueError("order quantity must be >= 0")


@dataclass(frozen=True)
class Match:
    buyer: int
    seller: int
    commodity: str
    quantity: float
    price: float


@dataclass
class MatchResult:
    matches: list[Match] = field(default_factory=list)
    residual: dict[tuple[int, str, str], float] = field(default_factory=dict)  # (ic, side, commodity) -> unmatched
    rounds: int = 0

    def bought(self, ic_id: int, commodity: str) -> dict[int, float]:
        out: dict[int, float] = defaultdict(float)
        for m in self.matches:
            if m.buyer == ic_id and m.commodity == commodity:
                out[m.seller] += m.quantity
        return dict(out)

    def sold(self, ic_id: int, commodity: str) -> dict[int, float]:
        out: dict[int, float] = defaultdict(float)
        for m in self.matches:
            if m.seller == ic_id and m.commodity == commodity:
                out[m.buyer] += m.quantity
        return dict(out)


@dataclass(frozen=True)
class PriceCorridor:
    """Grid purchase price (ceiling) and grid buy-back price (floor) for one commodity."""

    ceiling: float
    floor: float


def bid_price(c: PriceCorridor, lambda_buy: float) -> float:
    return c.floor + lambda_buy * (c.ceiling - c.floor)


def ask_price(c: PriceCorridor, lambda_sell: float) -> float:
    return c.floor + lambda_sell * (c.ceiling - c.floor)


def generate_orders(desired: Mapping[int, Mapping[str, float]], corridors: Mapping[str, PriceCorridor],
                    lambda_buy: float = 0.75, lambda_sell: float = 0.25, min_qty: float = 1e-9) -> list[Order]:
    """One order per IC, commodity and side with a nonzero desired quantity.

    ``desired[ic]`` holds ``xeb``, ``xes``, ``xgb``, ``xgs`` (MWh).
    """
    keys = {ELECTRICITY: ("xeb", "xes"), GAS: ("xgb", "xgs")}
    orders = []
    for ic_id in sorted(desired):
        d = desired[ic_id]
        for commodity, (kb, ks) in keys.items():
            if commodity not in corridors:
                continue
            c = corridors[commodity]
            qb = d.get(kb, 0.0)
            qs = d.get(ks, 0.0)
            if qb > min_qty:
                orders.append(Order(ic_id, BUYER, commodity, qb, bid_price(c, lambda_buy)))
            if qs > min_qty:
                orders.append(Order(ic_id, SELLER, commodity, qs, ask_price(c, lambda_sell)))
    return orders


def _buyer_rank(o: Order):
    return (-o.price, o.ic_id)


def _seller_rank(o: Order):
    return (o.price, o.ic_id)


def match(orders: Iterable[Order], rng: np.random.Generator | None = None,
          pair_caps: Mapping[tuple[int, int, str], float] | None = None,
          restricted: Iterable[str] = ()) -> MatchResult:
    """Stable many-to-many matching, run separately per commodity.

    ``pair_caps[(buyer, seller, commodity)]`` limits the quantity a pair may
    trade. For commodities listed in ``restricted`` only pairs present in
    ``pair_caps`` may trade at all (gas needs a pipeline).
    """
    orders = list(orders)
    rng = rng if rng is not None else np.random.default_rng(0)
    pair_caps = dict(pair_caps or {})
    restricted = set(restricted)
    result = MatchResult()
    for commodity in sorted({o.commodity for o in orders}):
        buyers = sorted((o for o in orders if o.commodity == commodity and o.side == BUYER), key=lambda o: o.ic_id)
        sellers = sorted((o for o in orders if o.commodity == commodity and o.side == SELLER), key=lambda o: o.ic_id)
        if len({o.ic_id for o in buyers}) != len(buyers) or len({o.ic_id for o in sellers}) != len(sellers):
            raise ValueError("at most one order per IC, side and commodity")
        sub, rounds = _deferred_acceptance(buyers, sellers, commodity, rng, pair_caps, commodity in restricted)
        result.rounds = max(result.rounds, rounds)
        held_b: dict[int, float] = defaultdict(float)
        held_s: dict[int, float] = defaultdict(float)
        b_by_id = {o.ic_id: o for o in buyers}
        s_by_id = {o.ic_id: o for o in sellers}
        for (i, j), q in sorted(sub.items()):
            if q <= QTY_EPS:
                continue
            price = 0.5 * (b_by_id[i].price + s_by_id[j].price)
            result.matches.append(Match(i, j, commodity, q, price))
            held_b[i] += q
            held_s[j] += q
        for o in buyers:
            result.residual[(o.ic_id, BUYER, commodity)] = max(o.quantity - held_b[o.ic_id], 0.0)
        for o in sellers:
            result.residual[(o.ic_id, SELLER, commodity)] = max(o.quantity - held_s[o.ic_id], 0.0)
    return result


def _pair_cap(pair_caps, i, j, commodity, restricted) -> float:
    key = (i, j, commodity)
    if key in pair_caps:
        return pair_caps[key]
    return 0.0 if restricted else np.inf


def _deferred_acceptance(buyers: list[Order], sellers: list[Order], commodity: str, rng: np.random.Generator,
                         pair_caps, restricted: bool):
    s_by_id = {o.ic_id: o for o in sellers}
    b_by_id = {o.ic_id: o for o in buyers}
    prefs = {}
    for b in buyers:
        ok = [s for s in sellers if s.ic_id != b.ic_id and s.price <= b.price
              and _pair_cap(pair_caps, b.ic_id, s.ic_id, commodity, restricted) > QTY_EPS]
        prefs[b.ic_id] = [s.ic_id for s in sorted(ok, key=_seller_rank)]
    next_idx = {b.ic_id: 0 for b in buyers}
    hold: dict[tuple[int, int], float] = defaultdict(float)  # (buyer, seller) -> tentatively accepted

    def unmet(i: int) -> float:
        return b_by_id[i].quantity - sum(q for (bi, _), q in hold.items() if bi == i)

    limit = max(1, (len(buyers) + len(sellers)) ** 2)
    rounds = 0
    while True:
        proposals: dict[int, dict[int, float]] = defaultdict(dict)
        for b in buyers:
            i = b.ic_id
            need = unmet(i)
            if need <= QTY_EPS:
                continue
            while next_idx[i] < len(prefs[i]):
                j = prefs[i][next_idx[i]]
                req = min(need, _pair_cap(pair_caps, i, j, commodity, restricted) - hold[(i, j)])
                if req > QTY_EPS:
                    proposals[j][i] = req
                    break
                next_idx[i] += 1
        if not proposals:
            break
        rounds += 1
        if rounds > limit:
            raise MatchingError(f"matching did not terminate within {limit} rounds")
        order = list(proposals)
        rng.shuffle(order)
        for j in order:
            # pool current holds and new proposals, keep the best buyers up to capacity
            pool = {i: q for (i, jj), q in hold.items() if jj == j and q > 0}
            for i, q in proposals[j].items():
                pool[i] = pool.get(i, 0.0) + q
            left = s_by_id[j].quantity
            for i in sorted(pool, key=lambda i: _buyer_rank(b_by_id[i])):
                take = min(pool[i], left)
                left -= take
                if take < pool[i] - QTY_EPS:
                    # rejected in part: this seller stays full with better buyers from now on
                    next_idx[i] = max(next_idx[i], prefs[i].index(j) + 1)
                hold[(i, j)] = take
            for i in proposals[j]:
                if hold[(i, j)] >= pool[i] - QTY_EPS and unmet(i) > QTY_EPS:
                    # fully accepted but still short: the pair cap is exhausted, move on
                    cap = _pair_cap(pair_caps, i, j, commodity, restricted)
                    if hold[(i, j)] >= cap - QTY_EPS:
                        next_idx[i] = max(next_idx[i], prefs[i].index(j) + 1)
    return {k: v for k, v in hold.items() if v > QTY_EPS}, rounds


def settle_trades(result: MatchResult) -> dict[int, tuple[float, float]]:
    """Per-IC (purchase cost, sales revenue) in yuan."""
    cost: dict[int, float] = defaultdict(float)
    revenue: dict[int, float] = defaultdict(float)
    for m in result.matches:
        cost[m.buyer] += m.price * m.quantity
        revenue[m.seller] += m.price * m.quantity
    ids = set(cost) | set(revenue)
    return {i: (cost[i], revenue[i]) for i in sorted(ids)}


def blocking_pairs(orders: Iterable[Order], result: MatchResult,
                   pair_caps: Mapping[tuple[int, int, str], float] | None = None,
                   restricted: Iterable[str] = (), tol: float = 1e-9) -> list[tuple[int, int, str]]:
    """Buyer-seller pairs that would both gain from trading more with each other."""
    orders = list(orders)
    pair_caps = dict(pair_caps or {})
    restricted = set(restricted)
    held: dict[tuple[int, int, str], float] = defaultdict(float)
    for m in result.matches:
        held[(m.buyer, m.seller, m.commodity)] += m.quantity
    out = []
    for b in (o for o in orders if o.side == BUYER):
        for s in (o for o in orders if o.side == SELLER and o.commodity == b.commodity):
            c = b.commodity
            if s.ic_id == b.ic_id or s.price > b.price:
                continue
            cap = _pair_cap(pair_caps, b.ic_id, s.ic_id, c, c in restricted)
            if held[(b.ic_id, s.ic_id, c)] >= cap - tol:
                continue
            bought = sum(q for (i, _, cc), q in held.items() if i == b.ic_id and cc == c)
            buyer_wants = bought < b.quantity - tol or any(
                q > tol and _seller_rank(s2) > _seller_rank(s)
                for s2 in orders if s2.side == SELLER and s2.commodity == c
                for q in [held[(b.ic_id, s2.ic_id, c)]]
            )
            sold = sum(q for (_, j, cc), q in held.items() if j == s.ic_id and cc == c)
            seller_wants = sold < s.quantity - tol or any(
                q > tol and _buyer_rank(b2) > _buyer_rank(b)
                for b2 in orders if b2.side == BUYER and b2.commodity == c
                for q in [held[(b2.ic_id, s.ic_id, c)]]
            )
            if buyer_wants and seller_wants:
                out.append((b.ic_id, s.ic_id, c))
    return out
