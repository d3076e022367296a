"""Hour-by-hour park simulation, baselines, ablations and trace output.

Each slot runs four phases: (a) every cluster solves its drift-plus-penalty
problem with trades priced at its own bid/ask to find desired trades (gas
purchases go through the relaxed pipeline model with bound tightening),
(b) orders are matched, (c) every cluster re-solves with its matched trades
fixed, (d) storage levels and virtual queues advance. Carbon is settled daily
against the ladder tariff using emissions traced through the carbon flow model.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from . import carbon_flow as cf
from .carbon_market import (CarbonPosition, ladder_cost, marginal_carbon_price, max_marginal_price,
                            band_index)
from .devices import (SlotDecisionVars, TradeLimits, emit_balance_constraints, emit_device_constraints,
                      emit_storage_level_constraints, emit_trade_flow_link, fix_trades, register_slot_vars)
from .gas_relax import (PipeIterate, PipeRelaxState, TighteningDivergedError, add_pressure_vars,
                        initial_bounds, tighten_bounds)
from .lyapunov import (Lemma1Params, SlotPrices, VirtualQueues, assemble_slot_objective,
                       initial_queues, lemma1_params, slot_cost, update_queues)
from .matching import ELECTRICITY, GAS, Match, PriceCorridor, ask_price, bid_price, generate_orders, match
from .model import IndustrialCluster, ParkModel, Pipeline, replace_series
from .solver import ConicProgram, LpTemplate, diagnose_infeasible, lsum, solve

POLICIES = ("lyapunov", "greedy", "oracle")
SOLVE_TOL = 1e-7
PRESSURE_REG = 1e-6  # tiny preference for small pressure drops at high pressure
IDLE_EPS = 1e-9  # objective coefficients below solver tolerance count as zero
IDLE_VARS = ("ce", "de", "ch", "dh", "e_grid", "e_out", "e_p2g", "e_chp", "h_chp", "g_boiler", "g_plant", "capture")


class SimulationError(RuntimeError):
    pass


class SlotInfeasibleError(SimulationError):
    def __init__(self, slot: int, ic_id: int, phase: str, rows: list[str]):
        super().__init__(f"slot {slot}, IC {ic_id}, phase {phase}: infeasible; rows needing relief: {rows}")
        self.slot = slot
        self.ic_id = ic_id
        self.phase = phase
        self.rows = rows

    def record(self) -> dict[str, Any]:
        return {"error": "infeasible_slot", "slot": self.slot, "ic": self.ic_id, "phase": self.phase,
                "rows": self.rows}


class SeriesExhaustedError(SimulationError):
    pass


DECISIONS = SlotDecisionVars.NAMES
COST_FIELDS = ("cost_grid", "cost_export", "cost_gas", "cost_capture", "cost_green", "cost_trade_buy",
               "cost_trade_sell")
SLOT_FIELDS = (("t", "ic") + DECISIONS
               + ("p_e", "p_o", "p_g", "p_capture", "green_credit", "carbon_signal")
               + COST_FIELDS + ("cost_total", "battery", "tank", "F", "Z", "emissions", "capture_credit",
                                "simultaneous", "tighten_iters", "tighten_residual", "tighten_converged"))
DAY_FIELDS = ("day", "ic", "quota", "actual", "deviation", "band", "carbon_cost")
MATCH_FIELDS = ("t", "buyer", "seller", "commodity", "quantity", "price")
CHECK_FIELDS = ("t", "trade_cost_sum", "trade_revenue_sum", "emission_source", "emission_attributed",
                "emission_captured", "emission_rel_mismatch")


@dataclass
class SimTrace:
    policy: str
    seed: int
    horizon: int
    ic_ids: list[int]
    slots: list[dict] = field(default_factory=list)
    days: list[dict] = field(default_factory=list)
    matches: list[dict] = field(default_factory=list)
    checks: list[dict] = field(default_factory=list)
    params: dict[int, Lemma1Params] = field(default_factory=dict)

    def slot_rows(self, ic_id: int) -> list[dict]:
        return [r for r in self.slots if r["ic"] == ic_id]

    @property
    def energy_cost(self) -> float:
        return float(sum(r["cost_total"] for r in self.slots))

    @property
    def carbon_cost(self) -> float:
        return float(sum(r["carbon_cost"] for r in self.days))

    @property
    def total_cost(self) -> float:
        return self.energy_cost + self.carbon_cost

    def ic_energy_cost(self, ic_id: int) -> float:
        return float(sum(r["cost_total"] for r in self.slots if r["ic"] == ic_id))

    def ic_total_cost(self, ic_id: int) -> float:
        return self.ic_energy_cost(ic_id) + float(sum(r["carbon_cost"] for r in self.days if r["ic"] == ic_id))

    @property
    def emissions(self) -> float:
        return float(sum(r["emissions"] for r in self.slots))

    @property
    def captured(self) -> float:
        return float(sum(r["capture_credit"] for r in self.slots))

    def summary(self) -> dict[str, float]:
        return {"policy": self.policy, "total_cost": self.total_cost, "energy_cost": self.energy_cost,
                "carbon_cost": self.carbon_cost, "emissions": self.emissions, "captured": self.captured}

    def write_csv(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "slots.csv", SLOT_FIELDS, self.slots)
        _write_rows(out / "days.csv", DAY_FIELDS, self.days)
        _write_rows(out / "matches.csv", MATCH_FIELDS, self.matches)
        _write_rows(out / "checks.csv", CHECK_FIELDS, self.checks)
        return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_rows(path: Path, fields: Iterable[str], rows: list[dict]) -> None:
    fields = list(fields)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in fields])


# ---------------------------------------------------------------------------
# Prices and signals
# ---------------------------------------------------------------------------


def tariff_factor(model: ParkModel) -> float:
    """Multiplier on the plant tariff.

    With coordinated capture and trading the plain tariff applies. Otherwise
    clusters buy from the plant running at full capture, and the capture cost
    is passed on: capturing the carbon of one delivered MWh takes
    ``ccpp_intensity / b_cc`` MWh of capture electricity at the tariff, unless
    an explicit markup is configured.
    """
    cb = model.carbon
    if cb.cctcc:
        return 1.0
    if cb.ccppmp_markup is not None:
        return 1.0 + cb.ccppmp_markup
    return 1.0 + model.electricity.ccpp_intensity / cb.ccpp.b_cc


def slot_prices(model: ParkModel, t: int) -> SlotPrices:
    s, cb, mk = model.series, model.carbon, model.market
    b = model.electricity.ccpp_intensity
    p_e = s.p_e[t] * tariff_factor(model)
    corr_e = PriceCorridor(ceiling=p_e, floor=s.p_o[t])
    corr_g = PriceCorridor(ceiling=s.p_g[t], floor=mk.gas_floor_ratio * s.p_g[t])
    return SlotPrices(
        p_e=p_e, p_o=s.p_o[t], p_g=s.p_g[t], p_capture=s.p_e[t],
        grid_intensity=b if cb.cctcc else b * (1.0 - cb.ccpp.eta_cc),
        gas_intensity=cb.i_gc,
        capture_credit=cb.ccpp.eta_cc * cb.ccpp.b_cc,
        bid_e=bid_price(corr_e, mk.lambda_buy), ask_e=ask_price(corr_e, mk.lambda_sell),
        bid_g=bid_price(corr_g, mk.lambda_buy), ask_g=ask_price(corr_g, mk.lambda_sell),
        green_credit=cb.green_certificate_price,
    )


def carbon_scale(model: ParkModel, t: int) -> float:
    """Series carbon price relative to the tariff's base price."""
    return model.series.p_c[t] / model.ladder.p_c


def carbon_signal(model: ParkModel, pos: CarbonPosition, hour_of_day: int, day_hours: int, t: int) -> float:
    """Marginal tariff price at the running position against a prorated quota."""
    lad = model.ladder
    dev = pos.actual - pos.quota * hour_of_day / day_hours
    edge = (lad.K + 1) * lad.l
    dev = min(max(dev, -edge + 1e-9), edge)
    return marginal_carbon_price(CarbonPosition(0.0, dev), lad) * carbon_scale(model, t)


def effective_price_maxima(model: ParkModel, horizon: int | None = None) -> tuple[float, float]:
    """Largest normalized marginal prices of electricity and gas including the carbon signal."""
    T = horizon or model.horizon
    s, cb = model.series, model.carbon
    pc_max = max_marginal_price(model.ladder) * max(max(s.p_c[:T]) / model.ladder.p_c, 0.0)
    p = slot_prices(model, 0)
    p_e = max(s.p_e[:T]) * tariff_factor(model) + pc_max * p.grid_intensity
    p_g = max(s.p_g[:T]) + pc_max * cb.i_gc
    ref = model.control.price_ref
    return p_e / ref, p_g / ref


def control_params(model: ParkModel, horizon: int | None = None) -> dict[int, Lemma1Params]:
    pe, pg = effective_price_maxima(model, horizon)
    if pe <= 0 or pg <= 0:
        # nothing to price: the penalty term vanishes and only the storage offsets remain
        return {ic.id: Lemma1Params(ic.battery.discharge_max, ic.tank.discharge_max, 0.0, math.inf)
                for ic in model.ics}
    return {ic.id: lemma1_params(ic, pe, pg, model.control.v_requested) for ic in model.ics}


# ---------------------------------------------------------------------------
# Topology helpers
# ---------------------------------------------------------------------------


def _gas_owner(model: ParkModel) -> dict[str, int]:
    return {n: ic.id for ic in model.ics for n in ic.nodes.gas}


def incoming_pipes(model: ParkModel, ic: IndustrialCluster) -> list[tuple[Pipeline, int]]:
    owner = _gas_owner(model)
    return [(p, owner[p.from_node]) for p in model.gas.pipelines
            if p.to_node in ic.nodes.gas and p.from_node in owner and owner[p.from_node] != ic.id]


def outgoing_pipes(model: ParkModel, ic: IndustrialCluster) -> list[tuple[Pipeline, int]]:
    owner = _gas_owner(model)
    return [(p, owner[p.to_node]) for p in model.gas.pipelines
            if p.from_node in ic.nodes.gas and p.to_node in owner and owner[p.to_node] != ic.id]


def pipe_for(model: ParkModel, buyer: IndustrialCluster, seller: int) -> Pipeline:
    for p, j in incoming_pipes(model, buyer):
        if j == seller:
            return p
    raise KeyError(f"no pipeline from IC {seller} to IC {buyer.id}")


# ---------------------------------------------------------------------------
# Per-IC slot programs
# ---------------------------------------------------------------------------


@dataclass
class FixedTrades:
    e_buy: dict[int, float] = field(default_factory=dict)
    e_sell: dict[int, float] = field(default_factory=dict)
    g_buy: dict[int, float] = field(default_factory=dict)
    g_sell: dict[int, float] = field(default_factory=dict)
    buy_cost: float = 0.0
    sell_revenue: float = 0.0

    @property
    def net_cost(self) -> float:
        return self.buy_cost - self.sell_revenue


@dataclass
class SlotProblem:
    program: ConicProgram
    vars: SlotDecisionVars
    relax: dict


def build_slot_problem(model: ParkModel, ic: IndustrialCluster, t: int, prices: SlotPrices, signal: float,
                       queues: VirtualQueues, storage_guard: bool = False, trades: FixedTrades | None = None,
                       pipe_bounds: Mapping | None = None) -> SlotProblem:
    """Drift-plus-penalty problem of one IC in one slot.

    Without ``trades`` the IC may trade at its own bid/ask (desired-trade
    phase); with ``trades`` the matched quantities are fixed.
    """
    mk = model.market
    prog = ConicProgram(f"ic{ic.id}.t{t}")
    incoming = incoming_pipes(model, ic) if mk.gas_trading else []
    outgoing = outgoing_pipes(model, ic) if mk.gas_trading else []
    if trades is None:
        cap = mk.trade_cap
        e_cap = cap if mk.electricity_trading and len(model.ics) > 1 else 0.0
        limits = TradeLimits(e_buy=e_cap, e_sell=e_cap, g_buy=cap if incoming else 0.0,
                             g_sell=cap if outgoing else 0.0)
    else:
        limits = TradeLimits()
    vs = register_slot_vars(prog, ic, ic.pv.cap_profile[t], model.carbon, limits)
    emit_device_constraints(prog, ic, vs)
    relax = {}
    if trades is None:
        if limits.g_buy > 0:
            for pipe, seller in incoming:
                pressures = add_pressure_vars(prog, model.gas, [pipe.from_node, pipe.to_node],
                                              prefix=f"{vs.prefix}pi.{pipe.id}")
                b = (pipe_bounds or {}).get(pipe.id)
                relax[pipe.id] = emit_trade_flow_link(prog, vs, pipe, model.gas, None, pressures, seller,
                                                      bounds=b, f_cap=mk.trade_cap)
    else:
        fix_trades(prog, vs, trades.e_buy, trades.e_sell, trades.g_buy, trades.g_sell)
        for seller, qty in sorted(trades.g_buy.items()):
            pipe = pipe_for(model, ic, seller)
            pressures = add_pressure_vars(prog, model.gas, [pipe.from_node, pipe.to_node],
                                          prefix=f"{vs.prefix}pi.{pipe.id}")
            relax[pipe.id] = emit_trade_flow_link(prog, vs, pipe, model.gas, qty, pressures, seller,
                                                  f_cap=mk.trade_cap)
    if storage_guard:
        emit_storage_level_constraints(prog, ic, vs, queues.battery, queues.tank)
    emit_balance_constraints(prog, ic, vs, model.series.e_load[ic.id][t], model.series.h_load[ic.id][t])
    trade_cost = None if trades is None else trades.net_cost
    assemble_slot_objective(prog, vs, queues, prices, signal, model.control.price_ref, trade_cost)
    if all(abs(v) <= IDLE_EPS for v in prog.objective.terms.values()):
        # nothing is priced, so every feasible point ties; pick the least device activity
        prog.minimize(lsum(getattr(vs, k) for k in IDLE_VARS))
    for rv in relax.values():
        prog.minimize((rv.d - 0.1 * rv.s) * PRESSURE_REG)
    return SlotProblem(prog, vs, relax)


def net_storage(d: Mapping[str, float]) -> tuple[dict[str, float], float]:
    """Cancel simultaneous charge and discharge.

    Storage is lossless, so every term of the slot problem sees only
    ``ce - de`` and ``ch - dh``; overlapping amounts are an interior-point tie
    and can be netted without changing balances, costs or queues. Returns the
    netted decisions and the largest overlap removed.
    """
    out = dict(d)
    overlap = max(min(d["ce"], d["de"]), min(d["ch"], d["dh"]), 0.0)
    for c, x in (("ce", "de"), ("ch", "dh")):
        net = d[c] - d[x]
        out[c], out[x] = max(net, 0.0), max(-net, 0.0)
    return out, overlap


@dataclass
class TighteningInfo:
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True


def _solve_or_raise(problem: SlotProblem, t: int, ic_id: int, phase: str):
    rep = solve(problem.program, tol=SOLVE_TOL)
    if not rep.ok:
        raise SlotInfeasibleError(t, ic_id, phase, diagnose_infeasible(problem.program))
    return rep


def desired_trades(model: ParkModel, ic: IndustrialCluster, t: int, prices: SlotPrices, signal: float,
                   queues: VirtualQueues, storage_guard: bool):
    """Phase (a): solve with trades at own prices; gas purchases tightened around the relaxation."""
    def build(bounds=None):
        return build_slot_problem(model, ic, t, prices, signal, queues, storage_guard, None, bounds)

    first = build()
    if not first.relax:
        return first, _solve_or_raise(first, t, ic.id, "desired"), TighteningInfo()
    ctl = model.control
    pipes = {pid: model.gas.pipeline(pid) for pid in first.relax}
    outer = {pid: initial_bounds(p, model.gas, model.market.trade_cap) for pid, p in pipes.items()}

    def attempt(bounds):
        prob = build(bounds)
        rep = solve(prob.program, tol=SOLVE_TOL)
        if not rep.ok:
            return None
        it = {pid: PipeIterate(rep.value(rv.f), rep.value(rv.d), rep.value(rv.s)) for pid, rv in prob.relax.items()}
        return it, (prob, rep)

    state = PipeRelaxState(pipes=pipes, bounds=outer, sigma1=ctl.sigma1, sigma_decay=ctl.sigma_decay,
                           delta=ctl.delta, max_iter=ctl.max_iter)
    try:
        st = tighten_bounds(state, attempt)
        prob, rep = st.solution
        return prob, rep, TighteningInfo(st.iterations, st.final_residual, st.converged)
    except TighteningDivergedError as exc:
        out = attempt(exc.last_bounds)
        if out is None:
            raise SlotInfeasibleError(t, ic.id, "desired", diagnose_infeasible(first.program)) from exc
        prob, rep = out[1]
        res = exc.history[-1].max_residual if exc.history else math.nan
        return prob, rep, TighteningInfo(len(exc.history), res, False)


def _trades_for(result, ic_id: int) -> FixedTrades:
    ft = FixedTrades(e_buy=result.bought(ic_id, ELECTRICITY), e_sell=result.sold(ic_id, ELECTRICITY),
                     g_buy=result.bought(ic_id, GAS), g_sell=result.sold(ic_id, GAS))
    for m in result.matches:
        if m.buyer == ic_id:
            ft.buy_cost += m.price * m.quantity
        if m.seller == ic_id:
            ft.sell_revenue += m.price * m.quantity
    return ft


# ---------------------------------------------------------------------------
# Carbon flow snapshot
# ---------------------------------------------------------------------------


def build_snapshot(model: ParkModel, t: int, decisions: Mapping[int, Mapping[str, float]],
                   matches: list[Match]) -> cf.FlowSnapshot:
    """Physical flows of one slot in the form the carbon-flow tracer expects (gas in m3)."""
    cb, el = model.carbon, model.electricity
    B = cb.calorific_b
    snap = cf.FlowSnapshot(calorific_b=B)
    b_inj = el.ccpp_intensity if cb.cctcc else el.ccpp_intensity * (1.0 - cb.ccpp.eta_cc)
    plant = 0.0
    pipes = {}
    for m in matches:
        if m.commodity == GAS:
            pipe = pipe_for(model, model.ic(m.buyer), m.seller)
            pipes[pipe.id] = (pipe, pipes.get(pipe.id, (pipe, 0.0))[1] + m.quantity)
    for pid, (pipe, qty) in sorted(pipes.items()):
        snap.gas_pipes.append(cf.Line(pipe.from_node, pipe.to_node, qty / B, pid))
        if pipe.compressor is not None and qty > 0:
            c = pipe.compressor
            snap.compressors.append(cf.CompressorUse(pid, c.e_consumption, c.intensity_node))
            snap.elec_loads.append(cf.Withdrawal(c.intensity_node, c.e_consumption, f"comp.{pid}", conversion=True))
            if c.intensity_node == el.ccpp_node:
                plant += c.e_consumption
            else:
                raise cf.UnsupportedTopologyError("compressors must draw from the plant node")
    net: dict[tuple[str, str], float] = {}
    for m in matches:
        if m.commodity == ELECTRICITY:
            a = model.ic(m.seller).e_node
            b = model.ic(m.buyer).e_node
            net[(a, b)] = net.get((a, b), 0.0) + m.quantity
    for (a, b), q in sorted(net.items()):
        back = net.get((b, a), 0.0)
        if q > back:
            snap.elec_lines.append(cf.Line(a, b, q - back, f"{a}->{b}"))
    for ic in model.ics:
        d = decisions[ic.id]
        e, g, h = ic.e_node, ic.g_node, ic.h_node
        plant += d["e_grid"]
        snap.elec_lines.append(cf.Line(el.ccpp_node, e, d["e_grid"], f"grid->{e}"))
        snap.elec_lines.append(cf.Line(e, el.export_node, d["e_out"], f"{e}->export"))
        snap.elec_injections += [
            cf.Injection(e, d["e_pv"], 0.0, "pv"),
            cf.Injection(e, d["de"], 0.0, "battery"),
            cf.Injection(e, d["e_chp"], tag="chp", link=(cf.GAS, g, ic.chp.gas_per_output)),
        ]
        e_load = model.series.e_load[ic.id][t]
        h_load = model.series.h_load[ic.id][t]
        snap.elec_loads += [
            cf.Withdrawal(e, e_load, "load"),
            cf.Withdrawal(e, d["ce"], "battery"),
            cf.Withdrawal(e, d["e_p2g"], "p2g", conversion=True),
        ]
        snap.gas_sources += [
            cf.Injection(g, d["g_plant"] / B, cb.i_gc, "plant"),
            cf.Injection(g, d["g_p2g"] / B, tag="p2g", link=(cf.ELEC, e, 1.0 / ic.p2g.eta_p2g)),
        ]
        snap.gas_loads += [
            cf.Withdrawal(g, d["g_chp"] / B, "chp", conversion=True),
            cf.Withdrawal(g, d["g_boiler"] / B, "boiler", conversion=True),
        ]
        snap.heat_injections += [
            cf.Injection(h, d["h_chp"], tag="chp", link=(cf.GAS, g, ic.chp.gas_per_output)),
            cf.Injection(h, d["h_boiler"], tag="boiler", link=(cf.GAS, g, 1.0 / ic.boiler.eta_bg)),
            cf.Injection(h, d["dh"], 0.0, "tank"),
        ]
        snap.heat_loads += [cf.Withdrawal(h, h_load, "load"), cf.Withdrawal(h, d["ch"], "tank")]
    export = sum(decisions[ic.id]["e_out"] for ic in model.ics)
    snap.elec_loads.append(cf.Withdrawal(el.export_node, export, "export"))
    snap.elec_injections.append(cf.Injection(el.ccpp_node, plant, b_inj, "plant"))
    if not cb.cctcc:
        snap.captured = cb.ccpp.eta_cc * el.ccpp_intensity * plant
    return snap


def slot_emissions(model: ParkModel, t: int, decisions: Mapping[int, Mapping[str, float]], matches: list[Match]):
    """Per-IC attributed emissions (clamped and raw) and the conservation record of one slot."""
    snap = build_snapshot(model, t, decisions, matches)
    el = model.electricity
    imap = cf.trace(snap, el.nodes, [n.id for n in model.gas.nodes], model.heat_nodes)
    bal = cf.emission_balance(snap, imap)
    per_ic, raw = {}, {}
    credit_total = 0.0
    for ic in model.ics:
        d = decisions[ic.id]
        loads = {cf.ELEC: {ic.e_node: model.series.e_load[ic.id][t] + d["ce"]},
                 cf.HEAT: {ic.h_node: model.series.h_load[ic.id][t] + d["ch"]}}
        ccpp = model.carbon.ccpp
        raw[ic.id] = cf.actual_emissions(ic, imap, loads, d["capture"], ccpp, snap.calorific_b, clamp=False)
        per_ic[ic.id] = max(raw[ic.id], 0.0)
        credit_total += ccpp.eta_cc * ccpp.b_cc * d["capture"]
    export_em = sum(w.amount * imap.electricity[w.node] for w in snap.elec_loads
                    if w.tag == "export")
    attributed = sum(raw.values()) + export_em
    captured = credit_total + snap.captured
    mismatch = abs(attributed + captured - bal.source) / max(abs(bal.source), 1e-12)
    if bal.source == 0 and abs(attributed + captured) < 1e-12:
        mismatch = 0.0
    check = {"emission_source": bal.source, "emission_attributed": attributed, "emission_captured": captured,
             "emission_rel_mismatch": mismatch, "tracer_rel_mismatch": bal.relative_mismatch}
    return per_ic, raw, check


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


def cost_terms(d: Mapping[str, float], prices: SlotPrices, trades: FixedTrades) -> dict[str, float]:
    """Slot cost components in yuan; ``cost_total`` is their sum."""
    terms = {
        "cost_grid": d["e_grid"] * prices.p_e,
        "cost_export": -d["e_out"] * prices.p_o,
        "cost_gas": d["g_plant"] * prices.p_g,
        "cost_capture": d["capture"] * prices.p_capture,
        "cost_green": -d["e_pv"] * prices.green_credit,
        "cost_trade_buy": trades.buy_cost,
        "cost_trade_sell": -trades.sell_revenue,
    }
    terms["cost_total"] = sum(terms[k] for k in COST_FIELDS)
    return terms


def recompute_slot_cost(row: Mapping[str, float]) -> float:
    """Independent recomputation of a recorded slot's cost from its decisions and prices."""
    return (row["e_grid"] * row["p_e"] - row["e_out"] * row["p_o"] + row["g_plant"] * row["p_g"]
            + row["capture"] * row["p_capture"] - row["e_pv"] * row["green_credit"]
            + row["cost_trade_buy"] + row["cost_trade_sell"])


# ---------------------------------------------------------------------------
# Simulation driver
# ---------------------------------------------------------------------------


class _Recorder:
    """Shared bookkeeping for online and offline policies."""

    def __init__(self, model: ParkModel, trace: SimTrace, horizon: int):
        self.model = model
        self.trace = trace
        self.horizon = horizon
        self.positions = {ic.id: CarbonPosition(ic.quota_daily) for ic in model.ics}
        self.day_start = 0

    def day_hours(self, t: int) -> int:
        start = (t // 24) * 24
        return min(24, self.horizon - start)

    def signal(self, ic_id: int, t: int) -> float:
        hours = self.day_hours(t)
        pos = self.positions[ic_id]
        quota_day = CarbonPosition(pos.quota * hours / 24.0, pos.actual)
        return carbon_signal(self.model, quota_day, t % 24, hours, t)

    def record_slot(self, t: int, decisions: dict[int, dict], trades: dict[int, FixedTrades], matches: list[Match],
                    prices: SlotPrices, signals: dict[int, float], queues: dict[int, VirtualQueues],
                    tighten: dict[int, TighteningInfo]):
        per_ic, raw, check = slot_emissions(self.model, t, decisions, matches)
        cb = self.model.carbon
        for ic in self.model.ics:
            d = decisions[ic.id]
            q = queues[ic.id]
            row = {"t": t, "ic": ic.id, **{k: float(d[k]) for k in DECISIONS},
                   "p_e": prices.p_e, "p_o": prices.p_o, "p_g": prices.p_g, "p_capture": prices.p_capture,
                   "green_credit": prices.green_credit, "carbon_signal": signals[ic.id]}
            row.update(cost_terms(d, prices, trades[ic.id]))
            info = tighten.get(ic.id, TighteningInfo())
            row.update({"battery": q.battery, "tank": q.tank, "F": q.F, "Z": q.Z, "emissions": per_ic[ic.id],
                        "capture_credit": cb.ccpp.eta_cc * cb.ccpp.b_cc * d["capture"],
                        "simultaneous": float(d.get("storage_overlap", 0.0)),
                        "tighten_iters": info.iterations, "tighten_residual": float(info.residual),
                        "tighten_converged": int(info.converged)})
            self.trace.slots.append(row)
            self.positions[ic.id].actual += per_ic[ic.id]
        for m in matches:
            self.trace.matches.append({"t": t, "buyer": m.buyer, "seller": m.seller, "commodity": m.commodity,
                                       "quantity": m.quantity, "price": m.price})
        self.trace.checks.append({
            "t": t,
            "trade_cost_sum": sum(tr.buy_cost for tr in trades.values()),
            "trade_revenue_sum": sum(tr.sell_revenue for tr in trades.values()),
            **{k: check[k] for k in CHECK_FIELDS if k in check},
        })
        if t == self.horizon - 1 or (t + 1) % 24 == 0:
            self.settle(t // 24, self.day_hours(t))

    def settle(self, day: int, hours: int) -> None:
        lad = self.model.ladder
        for ic in self.model.ics:
            pos = self.positions[ic.id]
            quota = pos.quota * hours / 24.0
            p = CarbonPosition(quota, pos.actual)
            self.trace.days.append({"day": day, "ic": ic.id, "quota": quota, "actual": pos.actual,
                                    "deviation": p.deviation, "band": band_index(p.deviation, lad),
                                    "carbon_cost": ladder_cost(p, lad)})
            pos.actual = 0.0


def _prepare(model: ParkModel, horizon: int | None) -> int:
    model.validate()
    T = model.horizon if horizon is None else int(horizon)
    if T > model.horizon:
        raise SeriesExhaustedError(f"horizon {T} exceeds series length {model.horizon}")
    if T < 0:
        raise SeriesExhaustedError("horizon must be >= 0")
    return T


def run_simulation(model: ParkModel, policy: str = "lyapunov", horizon: int | None = None,
                   seed: int = 0) -> SimTrace:
    """Simulate ``horizon`` slots under ``policy``; deterministic for a fixed seed."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
    T = _prepare(model, horizon)
    trace = SimTrace(policy, seed, T, [ic.id for ic in model.ics])
    if policy == "oracle":
        return _run_oracle(model, T, trace)
    rng = np.random.default_rng(seed)
    rec = _Recorder(model, trace, T)
    params = control_params(model, T) if T > 0 else {}
    trace.params = params
    queues = {ic.id: initial_queues(ic, params[ic.id]) for ic in model.ics} if T > 0 else {}
    greedy = policy == "greedy"
    mk = model.market
    for t in range(T):
        prices = slot_prices(model, t)
        signals = {ic.id: rec.signal(ic.id, t) for ic in model.ics}
        obj_q = {i: (replace(q, theta=q.battery, eps=q.tank, V=1.0) if greedy else q) for i, q in queues.items()}
        # (a) desired trades
        desired, caps, tighten = {}, {}, {}
        trading = len(model.ics) > 1 and (mk.electricity_trading or mk.gas_trading)
        if trading:
            for ic in model.ics:
                prob, rep, info = desired_trades(model, ic, t, prices, signals[ic.id], obj_q[ic.id], greedy)
                vals = prob.vars.values(rep.x)
                desired[ic.id] = {k: max(vals[k], 0.0) for k in ("xeb", "xes", "xgb", "xgs")}
                for pid, rv in prob.relax.items():
                    pipe = model.gas.pipeline(pid)
                    seller = _gas_owner(model)[pipe.from_node]
                    caps[(ic.id, seller, GAS)] = max(rep.value(rv.f), 0.0)
                tighten[ic.id] = info
            # (b) matching
            corridors = {}
            if mk.electricity_trading:
                corridors[ELECTRICITY] = PriceCorridor(prices.p_e, prices.p_o)
            if mk.gas_trading:
                corridors[GAS] = PriceCorridor(prices.p_g, mk.gas_floor_ratio * prices.p_g)
            orders = generate_orders(desired, corridors, mk.lambda_buy, mk.lambda_sell)
            result = match(orders, rng, caps, restricted=(GAS,))
        else:
            result = match([], rng)
        # (c) final schedules with matched trades fixed
        decisions, trades = {}, {}
        for ic in model.ics:
            ft = _trades_for(result, ic.id)
            prob = build_slot_problem(model, ic, t, prices, signals[ic.id], obj_q[ic.id], greedy, ft)
            rep = _solve_or_raise(prob, t, ic.id, "final")
            vals, overlap = net_storage(prob.vars.values(rep.x))
            decisions[ic.id] = {**vals, "storage_overlap": overlap}
            trades[ic.id] = ft
        # (d) queue update
        new_q = {}
        for ic in model.ics:
            d = decisions[ic.id]
            new_q[ic.id] = update_queues(queues[ic.id], d["ce"], d["de"], d["ch"], d["dh"], ic)
        rec.record_slot(t, decisions, trades, result.matches, prices, signals, queues, tighten)
        queues = new_q
    return trace


# ---------------------------------------------------------------------------
# Perfect-foresight oracle
# ---------------------------------------------------------------------------


def oracle_program(model: ParkModel, ic: IndustrialCluster, horizon: int):
    """One program over the whole horizon for one IC: no trades, carbon priced linearly at the series price,
    storage returned to its starting level at the end."""
    prog = ConicProgram(f"oracle.ic{ic.id}")
    slots = []
    bat, tank = ic.battery, ic.tank
    b_level, w_level = bat.level0, tank.level0
    for t in range(horizon):
        prices = slot_prices(model, t)
        vs = register_slot_vars(prog, ic, ic.pv.cap_profile[t], model.carbon, TradeLimits(), prefix=f"ic{ic.id}.t{t}.")
        emit_device_constraints(prog, ic, vs)
        emit_balance_constraints(prog, ic, vs, model.series.e_load[ic.id][t], model.series.h_load[ic.id][t])
        b_level = b_level + vs.ce - vs.de
        w_level = w_level + vs.ch - vs.dh
        if t < horizon - 1:
            prog.add_le(b_level, bat.capacity_max, name=f"t{t}.bat_hi")
            prog.add_ge(b_level, bat.capacity_min, name=f"t{t}.bat_lo")
            prog.add_le(w_level, tank.capacity_max, name=f"t{t}.tank_hi")
            prog.add_ge(w_level, tank.capacity_min, name=f"t{t}.tank_lo")
        prog.minimize(slot_cost(vs, prices, model.series.p_c[t]) / model.control.price_ref)
        slots.append((vs, prices))
    if horizon > 0:
        prog.add_eq(b_level, bat.level0, name="bat_terminal")
        prog.add_eq(w_level, tank.level0, name="tank_terminal")
    return prog, slots


def _run_oracle(model: ParkModel, T: int, trace: SimTrace) -> SimTrace:
    rec = _Recorder(model, trace, T)
    per_ic = {}
    for ic in model.ics:
        prog, slots = oracle_program(model, ic, T)
        rep = solve(prog, tol=SOLVE_TOL, max_iter=400)
        if not rep.ok:
            raise SlotInfeasibleError(-1, ic.id, "oracle", diagnose_infeasible(prog))
        per_ic[ic.id] = []
        for vs, _ in slots:
            vals, overlap = net_storage(vs.values(rep.x))
            per_ic[ic.id].append({**vals, "storage_overlap": overlap})
    levels = {ic.id: VirtualQueues(ic.battery.level0, ic.tank.level0, 0.0, 0.0, 0.0) for ic in model.ics}
    empty = FixedTrades()
    for t in range(T):
        prices = slot_prices(model, t)
        decisions = {i: per_ic[i][t] for i in per_ic}
        signals = {i: model.series.p_c[t] for i in per_ic}
        rec.record_slot(t, decisions, {i: empty for i in per_ic}, [], prices, signals, levels, {})
        levels = {i: replace(q, battery=q.battery + decisions[i]["ce"] - decisions[i]["de"],
                             tank=q.tank + decisions[i]["ch"] - decisions[i]["dh"]) for i, q in levels.items()}
    return trace


# ---------------------------------------------------------------------------
# Model variants and ablations
# ---------------------------------------------------------------------------


def with_cctcc(model: ParkModel, on: bool) -> ParkModel:
    return replace(model, carbon=replace(model.carbon, cctcc=bool(on)))


def with_trading(model: ParkModel, electricity: bool | None = None, gas: bool | None = None) -> ParkModel:
    mk = model.market
    return replace(model, market=replace(
        mk, electricity_trading=mk.electricity_trading if electricity is None else bool(electricity),
        gas_trading=mk.gas_trading if gas is None else bool(gas)))


def with_storage(model: ParkModel, capacity: float) -> ParkModel:
    """Scale battery and tank capacity; starting levels go to mid-capacity."""
    ics = []
    for ic in model.ics:
        bat = replace(ic.battery, capacity_max=capacity, level0=capacity / 2)
        tank = replace(ic.tank, capacity_max=capacity, level0=capacity / 2)
        ics.append(replace(ic, battery=bat, tank=tank))
    return replace(model, ics=tuple(ics))


def with_v(model: ParkModel, v: float | None) -> ParkModel:
    return replace(model, control=replace(model.control, v_requested=v))


def without_renewables(model: ParkModel) -> ParkModel:
    ics = tuple(replace(ic, pv=replace(ic.pv, cap_profile=tuple(0.0 for _ in ic.pv.cap_profile)))
                for ic in model.ics)
    return replace(model, ics=ics)


def with_carbon_price_series(model: ParkModel, value: float) -> ParkModel:
    return replace_series(model, p_c=tuple(value for _ in model.series.p_c))


TOGGLES = {
    "cctcc": with_cctcc,
    "elec_trading": lambda m, v: with_trading(m, electricity=v),
    "gas_trading": lambda m, v: with_trading(m, gas=v),
    "storage_size": with_storage,
    "V_sweep": with_v,
    "renewables": lambda m, v: m if v else without_renewables(m),
}


@dataclass
class AblationResult:
    keys: list[str]
    traces: dict[tuple, SimTrace]
    table: list[dict]


def run_ablation(model: ParkModel, toggles: Mapping[str, Iterable[Any]], policy: str = "lyapunov",
                 horizon: int | None = None, seed: int = 0) -> AblationResult:
    """One simulation per combination of toggle values plus a summary table."""
    for k in toggles:
        if k not in TOGGLES:
            raise KeyError(f"unknown toggle {k!r}; choose from {sorted(TOGGLES)}")
    keys = list(toggles)
    traces, table = {}, []
    for combo in itertools.product(*(list(toggles[k]) for k in keys)):
        m = model
        for k, v in zip(keys, combo):
            m = TOGGLES[k](m, v)
        tr = run_simulation(m, policy, horizon, seed)
        traces[combo] = tr
        row = {k: v for k, v in zip(keys, combo)}
        row.update(tr.summary())
        table.append(row)
    return AblationResult(keys, traces, table)


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------


def emit_plots(trace: SimTrace | None, out_dir: str | Path, ablation: AblationResult | None = None) -> list[Path]:
    """Comma-separated plot data: per-slot cost, battery level and trade volume per IC, ablation totals."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = trace.ic_ids if trace is not None else []
    rows_by_t: dict[int, dict[int, dict]] = {}
    for r in (trace.slots if trace is not None else []):
        rows_by_t.setdefault(r["t"], {})[r["ic"]] = r
    written = []
    for fname, getter in (
        ("cost_per_slot.csv", lambda r: r["cost_total"]),
        ("battery_level.csv", lambda r: r["battery"]),
        ("trading_volume.csv", lambda r: r["xeb"] + r["xgb"] - r["xes"] - r["xgs"]),
    ):
        path = out / fname
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"ic{i}" for i in ids])
            for t in sorted(rows_by_t):
                w.writerow([t] + [_fmt(float(getter(rows_by_t[t][i]))) for i in ids])
        written.append(path)
    path = out / "ablation_totals.csv"
    keys = ablation.keys if ablation is not None else []
    fields = keys + ["total_cost", "energy_cost", "carbon_cost", "emissions", "captured"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in (ablation.table if ablation is not None else []):
            w.writerow([_fmt(r[k]) for k in fields])
    written.append(path)
    return written


# ---------------------------------------------------------------------------
# Batched long-run single-IC runner
# ---------------------------------------------------------------------------


BATCH_BOX = 1e3  # MWh; far above any device limit, only bounds free internal variables


@dataclass
class BatchRunResult:
    battery_min: np.ndarray
    battery_max: np.ndarray
    tank_min: np.ndarray
    tank_max: np.ndarray
    violations: np.ndarray  # per run count of slots outside the boxes
    average_cost: np.ndarray  # yuan per slot
    params: Lemma1Params
    unconverged: int  # slot solves left unconverged after the exact fallback
    fallbacks: int = 0  # slot solves handed to the exact fallback


def run_single_ic_batch(model: ParkModel, ic_id: int, runs: Mapping[str, np.ndarray], carbon_price: float,
                        v_requested: float | None = None, tol: float = 1e-7) -> BatchRunResult:
    """Lyapunov policy for one IC without trading, many runs advanced in lock step.

    ``runs`` holds arrays of shape (k, T): ``p_e``, ``p_o``, ``p_g`` (yuan/MWh),
    ``e_load``, ``h_load``, ``pv``. Carbon is priced linearly at ``carbon_price``.
    All slot problems share one constraint matrix, so each slot is a single
    batched LP solve.
    """
    ic = model.ic(ic_id)
    ref = model.control.price_ref
    p_e, p_o, p_g = runs["p_e"], runs["p_o"], runs["p_g"]
    k, T = p_e.shape
    cb = model.carbon
    markup = tariff_factor(model)
    proto = slot_prices(model, 0)
    pe_max = (p_e.max() * markup + carbon_price * proto.grid_intensity) / ref
    pg_max = (p_g.max() + carbon_price * cb.i_gc) / ref
    params = lemma1_params(ic, pe_max, pg_max, v_requested)

    prog = ConicProgram("batch")
    vs = register_slot_vars(prog, ic, 1.0, cb, TradeLimits())
    emit_device_constraints(prog, ic, vs)
    emit_balance_constraints(prog, ic, vs, 0.0, 0.0)
    tpl = LpTemplate(prog)
    n = prog.n
    eq_names = [r.name for r in prog.eqs]
    row_e, row_h = eq_names.index(f"{vs.prefix}bal_e"), eq_names.index(f"{vs.prefix}bal_h")
    _, _, b_eq0, _, b_le0, lb0, ub0, _ = prog.standard_form()

    def basis(**kw) -> np.ndarray:
        base = dict(p_e=0.0, p_o=0.0, p_g=0.0, p_capture=0.0, grid_intensity=proto.grid_intensity,
                    gas_intensity=proto.gas_intensity, capture_credit=proto.capture_credit)
        for key in ("p_e", "p_o", "p_g", "p_capture"):
            base[key] = kw.get(key, 0.0)
        sp = SlotPrices(**base)
        vec = np.zeros(n)
        expr = slot_cost(vs, sp, kw.get("carbon", 0.0))
        for j, v in expr.terms.items():
            vec[j] += v
        return vec

    c_pe, c_po, c_pg, c_cap = basis(p_e=1.0), basis(p_o=1.0), basis(p_g=1.0), basis(p_capture=1.0)
    c_carbon = basis(carbon=carbon_price)
    idx = {nm: prog.index[vs.prefix + nm] for nm in DECISIONS}
    B = np.full(k, ic.battery.level0)
    W = np.full(k, ic.tank.level0)
    stats = [B.copy(), B.copy(), W.copy(), W.copy()]
    viol = np.zeros(k, dtype=int)
    cost = np.zeros(k)
    unconverged = fallbacks = 0
    V = params.V
    for t in range(T):
        F = B - params.theta
        Z = W - params.eps
        pe_t = p_e[:, t] * markup
        c = (V / ref) * (np.outer(pe_t, c_pe) + np.outer(p_o[:, t], c_po) + np.outer(p_g[:, t], c_pg)
                         + np.outer(p_e[:, t], c_cap) + c_carbon[None, :])
        c[:, idx["ce"]] += F
        c[:, idx["de"]] -= F
        c[:, idx["ch"]] += Z
        c[:, idx["dh"]] -= Z
        b_eq = np.tile(b_eq0, (k, 1))
        b_eq[:, row_e] = runs["e_load"][:, t]
        b_eq[:, row_h] = runs["h_load"][:, t]
        b_le = np.tile(b_le0, (k, 1))
        lb = np.tile(lb0, (k, 1))
        ub = np.tile(ub0, (k, 1))
        ub[:, idx["e_pv"]] = runs["pv"][:, t]
        res = tpl.solve(c, b_eq, b_le, lb, ub, cap=BATCH_BOX)
        unconverged += int((~res.converged).sum())
        fallbacks += res.fallbacks
        x = np.clip(res.x, lb, ub)
        B = B + x[:, idx["ce"]] - x[:, idx["de"]]
        W = W + x[:, idx["ch"]] - x[:, idx["dh"]]
        bad = (~np.isfinite(B) | ~np.isfinite(W) | (B < ic.battery.capacity_min - tol) | (B > ic.battery.capacity_max + tol)
               | (W < ic.tank.capacity_min - tol) | (W > ic.tank.capacity_max + tol))
        viol += bad
        stats[0] = np.minimum(stats[0], B)
        stats[1] = np.maximum(stats[1], B)
        stats[2] = np.minimum(stats[2], W)
        stats[3] = np.maximum(stats[3], W)
        cost += (x[:, idx["e_grid"]] * pe_t - x[:, idx["e_out"]] * p_o[:, t] + x[:, idx["g_plant"]] * p_g[:, t]
                 + x[:, idx["capture"]] * p_e[:, t])
    return BatchRunResult(stats[0], stats[1], stats[2], stats[3], viol, cost / max(T, 1), params, unconverged, fallbacks)
