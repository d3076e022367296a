"""Virtual storage queues, perturbation parameters and the per-slot drift-plus-penalty objective."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .devices import SlotDecisionVars
from .model import IndustrialCluster, InvariantError
from .solver import Affine, ConicProgram


class CapacityTooSmallError(ValueError):
    """Storage is too small for any positive tradeoff weight."""


@dataclass(frozen=True)
class VirtualQueues:
    battery: float
    tank: float
    theta: float
    eps: float
    V: float

    @property
    def F(self) -> float:
        return self.battery - self.theta

    @property
    def Z(self) -> float:
        return self.tank - self.eps


@dataclass(frozen=True)
class Lemma1Params:
    theta: float
    eps: float
    V: float
    V_max: float


def drift_constant(ic: IndustrialCluster) -> float:
    """Constant term of the one-slot drift bound (squared MWh)."""
    b, w = ic.battery, ic.tank
    return 0.5 * (max(b.charge_max ** 2, b.discharge_max ** 2) + max(w.charge_max ** 2, w.discharge_max ** 2))


def v_max(ic: IndustrialCluster, p_e_max: float, p_g_max: float) -> float:
    if p_e_max <= 0 or p_g_max <= 0:
        raise ValueError("price maxima must be positive")
    b, w = ic.battery, ic.tank
    num_e = b.capacity_max - b.charge_max - b.discharge_max
    num_h = w.capacity_max - w.charge_max - w.discharge_max
    if num_e <= 0:
        raise CapacityTooSmallError(
            f"IC {ic.id}: battery capacity {b.capacity_max} <= charge_max + discharge_max")
    if num_h <= 0:
        raise CapacityTooSmallError(
            f"IC {ic.id}: tank capacity {w.capacity_max} <= charge_max + discharge_max")
    return min(num_e / p_e_max, ic.boiler.eta_bg * num_h / p_g_max)


def lemma1_params(ic: IndustrialCluster, p_e_max: float, p_g_max: float,
                  v_requested: float | None = None) -> Lemma1Params:
    """Perturbations and weight that keep both storages inside their boxes.

    Prices are in the same normalized unit as the slot objective.
    """
    vmax = v_max(ic, p_e_max, p_g_max)
    V = vmax if v_requested is None else min(max(v_requested, 0.0), vmax)
    theta = V * p_e_max + ic.battery.discharge_max
    eps = V * p_g_max / ic.boiler.eta_bg + ic.tank.discharge_max
    return Lemma1Params(theta=theta, eps=eps, V=V, V_max=vmax)


def initial_queues(ic: IndustrialCluster, params: Lemma1Params) -> VirtualQueues:
    return VirtualQueues(ic.battery.level0, ic.tank.level0, params.theta, params.eps, params.V)


def update_queues(q: VirtualQueues, ce: float, de: float, ch: float, dh: float,
                  ic: IndustrialCluster | None = None, tol: float = 1e-7) -> VirtualQueues:
    """Advance storage levels by one slot and re-derive the queues.

    With ``ic`` given, the new levels are checked against the capacity boxes;
    a violation means the perturbation argument failed and raises.
    """
    nq = replace(q, battery=q.battery + ce - de, tank=q.tank + ch - dh)
    if ic is not None:
        bad = []
        if not ic.battery.capacity_min - tol <= nq.battery <= ic.battery.capacity_max + tol:
            bad.append(f"battery level {nq.battery!r} outside [{ic.battery.capacity_min}, {ic.battery.capacity_max}]")
        if not ic.tank.capacity_min - tol <= nq.tank <= ic.tank.capacity_max + tol:
            bad.append(f"tank level {nq.tank!r} outside [{ic.tank.capacity_min}, {ic.tank.capacity_max}]")
        if bad:
            raise InvariantError(f"IC {ic.id}", "; ".join(bad) +
                                 f" | state before={q} decisions=(ce={ce!r}, de={de!r}, ch={ch!r}, dh={dh!r})")
    return nq


@dataclass(frozen=True)
class SlotPrices:
    """Prices and intensities seen by one IC in one slot (yuan/MWh, tCO2/MWh)."""

    p_e: float  # purchase price from the plant (tariff markup included)
    p_o: float
    p_g: float
    p_capture: float  # price of capture electricity
    grid_intensity: float  # intensity of purchased plant electricity
    gas_intensity: float
    capture_credit: float  # tCO2 removed per MWh of capture electricity
    bid_e: float = 0.0  # unit prices used for desired trades
    ask_e: float = 0.0
    bid_g: float = 0.0
    ask_g: float = 0.0
    green_credit: float = 0.0  # yuan per MWh of PV used


def emission_proxy(vs: SlotDecisionVars, prices: SlotPrices) -> Affine:
    """Linear estimate of the IC's emissions (tCO2) used to price carbon inside a slot."""
    return ((vs.e_grid - vs.e_out + vs.xeb - vs.xes) * prices.grid_intensity
            + (vs.g_plant + vs.xgb - vs.xgs) * prices.gas_intensity
            - vs.capture * prices.capture_credit)


def energy_cost(vs: SlotDecisionVars, prices: SlotPrices, trade_cost: float | None = None) -> Affine:
    """Energy part of the slot cost in yuan.

    Trades are priced at the IC's own bid/ask unless ``trade_cost`` (a settled
    net amount for fixed trades) is given.
    """
    cost = (vs.e_grid * prices.p_e - vs.e_out * prices.p_o + vs.g_plant * prices.p_g
            + vs.capture * prices.p_capture - vs.e_pv * prices.green_credit)
    if trade_cost is None:
        cost = cost + vs.xeb * prices.bid_e - vs.xes * prices.ask_e + vs.xgb * prices.bid_g - vs.xgs * prices.ask_g
    else:
        cost = cost + trade_cost
    return cost


def slot_cost(vs: SlotDecisionVars, prices: SlotPrices, carbon_price: float,
              trade_cost: float | None = None) -> Affine:
    """Instantaneous cost in yuan with carbon priced linearly at ``carbon_price``."""
    return energy_cost(vs, prices, trade_cost) + emission_proxy(vs, prices) * carbon_price


def assemble_slot_objective(program: ConicProgram, vs: SlotDecisionVars, q: VirtualQueues, prices: SlotPrices,
                            carbon_price: float, price_ref: float, trade_cost: float | None = None) -> Affine:
    """Drift-plus-penalty objective for one IC; it is also added to ``program``.

    ``F (ce - de) + Z (ch - dh) + V * cost / price_ref``.
    """
    for h in (vs.ce, vs.de, vs.ch, vs.dh, vs.e_grid):
        for k in h.terms:
            if not 0 <= k < program.n:
                raise KeyError(f"decision variable index {k} is not registered in the program")
    gamma = (vs.ce - vs.de) * q.F + (vs.ch - vs.dh) * q.Z + slot_cost(vs, prices, carbon_price, trade_cost) * (q.V / price_ref)
    program.minimize(gamma)
    return gamma
