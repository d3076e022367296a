"""Per-slot decision variables and feasible set of one industrial cluster."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .gas_relax import PipeBounds, RelaxVars, build_relaxation, initial_bounds
from .model import CarbonParams, GasNetwork, IndustrialCluster, Pipeline
from .solver import Affine, ConicProgram, lsum


@dataclass
class SlotDecisionVars:
    ce: Affine
    de: Affine
    ch: Affine
    dh: Affine
    e_grid: Affine
    e_out: Affine
    e_pv: Affine
    e_p2g: Affine
    g_p2g: Affine
    e_chp: Affine
    h_chp: Affine
    g_chp: Affine
    g_boiler: Affine
    h_boiler: Affine
    g_plant: Affine
    capture: Affine
    xeb: Affine
    xes: Affine
    xgb: Affine
    xgs: Affine
    prefix: str = ""
    # per-partner trade handles, keyed by partner IC id
    xeb_from: dict[int, Affine] = field(default_factory=dict)
    xes_to: dict[int, Affine] = field(default_factory=dict)
    xgb_from: dict[int, Affine] = field(default_factory=dict)
    xgs_to: dict[int, Affine] = field(default_factory=dict)
    relax: list[RelaxVars] = field(default_factory=list)

    NAMES = ("ce", "de", "ch", "dh", "e_grid", "e_out", "e_pv", "e_p2g", "g_p2g", "e_chp", "h_chp",
             "g_chp", "g_boiler", "h_boiler", "g_plant", "capture", "xeb", "xes", "xgb", "xgs")

    def values(self, x) -> dict[str, float]:
        return {k: getattr(self, k).value(x) for k in self.NAMES}


@dataclass(frozen=True)
class TradeLimits:
    """Upper bounds on aggregate trades in the desired-trade solve."""

    e_buy: float = 0.0
    e_sell: float = 0.0
    g_buy: float = 0.0
    g_sell: float = 0.0


def register_slot_vars(program: ConicProgram, ic: IndustrialCluster, pv_cap: float, carbon: CarbonParams,
                       limits: TradeLimits = TradeLimits(), prefix: str = "") -> SlotDecisionVars:
    """Register every decision variable of one IC for one slot, each exactly once."""
    p = prefix or f"ic{ic.id}."
    v = program.var
    bat, tank = ic.battery, ic.tank
    capture_ub = ic_capture_max(carbon)
    return SlotDecisionVars(
        ce=v(p + "ce", 0.0, bat.charge_max),
        de=v(p + "de", 0.0, bat.discharge_max),
        ch=v(p + "ch", 0.0, tank.charge_max),
        dh=v(p + "dh", 0.0, tank.discharge_max),
        e_grid=v(p + "e_grid", 0.0, ic.limits.e_max),
        e_out=v(p + "e_out", 0.0, ic.limits.eo_max),
        e_pv=v(p + "e_pv", 0.0, max(pv_cap, 0.0)),
        e_p2g=v(p + "e_p2g", 0.0),
        g_p2g=v(p + "g_p2g", 0.0, ic.p2g.g_max),
        e_chp=v(p + "e_chp", 0.0),
        h_chp=v(p + "h_chp", 0.0),
        g_chp=v(p + "g_chp", 0.0),
        g_boiler=v(p + "g_boiler", 0.0),
        h_boiler=v(p + "h_boiler", 0.0, ic.boiler.h_max),
        g_plant=v(p + "g_plant", 0.0, ic.limits.g_max),
        capture=v(p + "capture", 0.0, capture_ub),
        xeb=v(p + "xeb", 0.0, limits.e_buy),
        xes=v(p + "xes", 0.0, limits.e_sell),
        xgb=v(p + "xgb", 0.0, limits.g_buy),
        xgs=v(p + "xgs", 0.0, limits.g_sell),
        prefix=p,
    )


def ic_capture_max(carbon: CarbonParams) -> float:
    return carbon.ccpp.capture_max if carbon.cctcc else 0.0


def emit_device_constraints(program: ConicProgram, ic: IndustrialCluster, vs: SlotDecisionVars) -> None:
    """Storage boxes, CHP polygon, boiler and P2G conversion, PV cap, capture link."""
    p = vs.prefix
    # storage boxes and PV cap are variable bounds (set in register_slot_vars)
    for k, (ah, ae, r) in enumerate(ic.chp.half_planes()):
        program.add_le(vs.h_chp * ah + vs.e_chp * ae, r, name=f"{p}chp{k}")
    program.add_eq(vs.g_chp, (vs.e_chp + vs.h_chp) * ic.chp.gas_per_output, name=f"{p}chp_fuel")
    program.add_eq(vs.h_boiler, vs.g_boiler * ic.boiler.eta_bg, name=f"{p}boiler")
    program.add_eq(vs.g_p2g, vs.e_p2g * ic.p2g.eta_p2g, name=f"{p}p2g")
    # capture electricity cannot exceed the plant output bought by this IC
    program.add_le(vs.capture, vs.e_grid, name=f"{p}capture_link")


def emit_balance_constraints(program: ConicProgram, ic: IndustrialCluster, vs: SlotDecisionVars,
                             e_load: float, h_load: float) -> None:
    """Electricity, gas (no direct demand) and heat balances plus trade aggregation."""
    p = vs.prefix
    program.add_eq(
        vs.e_grid - vs.e_out + vs.xeb - vs.xes + vs.de - vs.ce + vs.e_chp - vs.e_p2g + vs.e_pv,
        e_load, name=f"{p}bal_e")
    program.add_eq(vs.g_plant - vs.g_chp - vs.g_boiler + vs.xgb - vs.xgs + vs.g_p2g, 0.0, name=f"{p}bal_g")
    program.add_eq(vs.h_chp + vs.h_boiler + vs.dh - vs.ch, h_load, name=f"{p}bal_h")
    for agg, parts, nm in ((vs.xeb, vs.xeb_from, "xeb"), (vs.xes, vs.xes_to, "xes"),
                           (vs.xgb, vs.xgb_from, "xgb"), (vs.xgs, vs.xgs_to, "xgs")):
        if parts:
            program.add_eq(agg, lsum(parts.values()), name=f"{p}agg_{nm}")


def emit_storage_level_constraints(program: ConicProgram, ic: IndustrialCluster, vs: SlotDecisionVars,
                                   battery: float, tank: float) -> None:
    """Keep next-slot storage levels inside their capacity boxes (used by the queue-free baseline)."""
    p = vs.prefix
    program.add_le(vs.ce - vs.de, ic.battery.capacity_max - battery, name=f"{p}bat_hi")
    program.add_ge(vs.ce - vs.de, ic.battery.capacity_min - battery, name=f"{p}bat_lo")
    program.add_le(vs.ch - vs.dh, ic.tank.capacity_max - tank, name=f"{p}tank_hi")
    program.add_ge(vs.ch - vs.dh, ic.tank.capacity_min - tank, name=f"{p}tank_lo")


def fix_trades(program: ConicProgram, vs: SlotDecisionVars, e_buy: dict[int, float], e_sell: dict[int, float],
               g_buy: dict[int, float], g_sell: dict[int, float]) -> None:
    """Register per-partner trade variables fixed at matched quantities and fix the aggregates."""
    p = vs.prefix
    for table, store, nm in ((e_buy, vs.xeb_from, "xeb"), (e_sell, vs.xes_to, "xes"),
                             (g_buy, vs.xgb_from, "xgb"), (g_sell, vs.xgs_to, "xgs")):
        for j, q in sorted(table.items()):
            store[j] = program.var(f"{p}{nm}[{j}]", q, q)
        program.fix(p + nm, sum(table.values()))


class UnmatchedPipelineError(KeyError):
    pass


def emit_trade_flow_link(program: ConicProgram, vs: SlotDecisionVars, pipeline: Pipeline, net: GasNetwork,
                         matched_trade: float | None, pressures: dict[str, Affine], seller: int,
                         bounds: PipeBounds | None = None, f_cap: float = math.inf) -> RelaxVars:
    """Tie a gas purchase from ``seller`` to the flow of ``pipeline`` with the relaxed Weymouth set.

    With ``matched_trade`` given, the flow is fixed to it; otherwise the flow is a
    free variable inside ``bounds`` and the purchase handle is created here.
    """
    if pipeline.id not in {pp.id for pp in net.pipelines}:
        raise UnmatchedPipelineError(pipeline.id)
    outer = initial_bounds(pipeline, net, f_cap)
    tag = f"{vs.prefix}{pipeline.id}"
    if matched_trade is not None:
        if seller not in vs.xgb_from:
            vs.xgb_from[seller] = program.var(f"{vs.prefix}xgb[{seller}]", matched_trade, matched_trade)
        f = vs.xgb_from[seller]
        b = PipeBounds(matched_trade, matched_trade, outer.d_min, outer.d_max, outer.s_min, outer.s_max)
        rv = build_relaxation(program, pipeline, b, f, pressures, tag=tag)
        # physical throughput limit of the pipeline under its pressure boxes
        f_phys = pipeline.weymouth_c * math.sqrt(max(
            net.node(pipeline.from_node).pressure_max ** 2 - net.node(pipeline.to_node).pressure_min ** 2, 0.0))
        program.add_le(f, f_phys, name=f"fphys[{tag}]")
    else:
        b = bounds or outer
        f = program.var(f"{vs.prefix}f[{pipeline.id}]", 0.0)
        vs.xgb_from[seller] = f
        rv = build_relaxation(program, pipeline, b, f, pressures, tag=tag)
    vs.relax.append(rv)
    return rv
