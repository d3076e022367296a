"""Ladder reward/punishment carbon tariff and its marginal price."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .model import CarbonLadder


class BandOverflowError(ValueError):
    """Deviation from the quota lies outside the tariff's 2K+2 bands."""


@dataclass
class CarbonPosition:
    quota: float
    actual: float = 0.0

    @property
    def deviation(self) -> float:
        return self.actual - self.quota

    def band(self, ladder: CarbonLadder) -> int:
        return band_index(self.deviation, ladder)


def _check(dev: float, ladder: CarbonLadder) -> None:
    if abs(dev) > (ladder.K + 1) * ladder.l:
        raise BandOverflowError(
            f"deviation {dev:.6g} tCO2 exceeds the tariff range +/-{(ladder.K + 1) * ladder.l:g}"
        )


def band_index(dev: float, ladder: CarbonLadder) -> int:
    """Signed band k: 0 for |dev| <= l, k for kl < dev <= (k+1)l, -k on the reward side.

    Band edges follow the tariff's half-open intervals: (kl, (k+1)l] above the
    quota and (-(k+1)l, -kl] below it.
    """
    _check(dev, ladder)
    l = ladder.l
    if dev > l:
        return min(ladder.K, math.ceil(dev / l) - 1)
    if dev <= -l:
        return -min(ladder.K, math.floor(-dev / l))
    return 0


def ladder_cost(pos: CarbonPosition, ladder: CarbonLadder) -> float:
    """Daily carbon trading cost; positive is a payment, negative a revenue."""
    dev = pos.deviation
    k = band_index(dev, ladder)
    pc, l = ladder.p_c, ladder.l
    if k == 0:
        return pc * dev
    if k > 0:
        a = ladder.alpha
        return pc * (1 + k * a) * (dev - k * l) + (k + (k - 1) * k * a / 2) * pc * l
    k = -k
    b = ladder.beta
    return -pc * (1 + k * b) * (-dev - k * l) - (k + (k - 1) * k * b / 2) * pc * l


def marginal_carbon_price(pos: CarbonPosition, ladder: CarbonLadder) -> float:
    """Slope of :func:`ladder_cost` with respect to actual emissions at ``pos``.

    On band edges the slope of the band containing the point is returned, which
    for the penalty side is the lower one and for the reward side the upper one.
    """
    k = band_index(pos.deviation, ladder)
    if k >= 0:
        return ladder.p_c * (1 + k * ladder.alpha)
    return ladder.p_c * (1 - k * ladder.beta)


def max_marginal_price(ladder: CarbonLadder) -> float:
    """Largest slope the tariff can take anywhere in its range."""
    return ladder.p_c * (1 + ladder.K * max(ladder.alpha, ladder.beta))


def settle_day(positions: dict[int, CarbonPosition], ladder: CarbonLadder) -> dict[int, float]:
    """Settle every IC's day and reset its accumulator to zero."""
    out = {}
    for ic_id, pos in positions.items():
        out[ic_id] = ladder_cost(pos, ladder)
    for pos in positions.values():
        pos.actual = 0.0
    return out
