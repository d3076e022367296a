"""Carbon emission flow: nodal intensities for electricity, gas and heat.

Every node mixes the emissions carried by its inflows and local injections and
passes the resulting intensity (tCO2 per MWh) to all of its outflows and loads.
Gas quantities in a snapshot are volumetric (m3); they are converted to MWh
with the calorific value before any intensity is formed.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .model import CcppParams, IndustrialCluster

ELEC, GAS, HEAT = "electricity", "gas", "heat"


class UnsupportedTopologyError(ValueError):
    """Flow orientation contains a cycle, so no proportional trace exists."""


class InfeasibleSnapshotError(ValueError):
    """A node withdraws energy but receives none."""


class MissingNodeError(KeyError):
    pass


@dataclass(frozen=True)
class Line:
    src: str
    dst: str
    flow: float
    id: str = ""


@dataclass(frozen=True)
class Injection:
    """Energy entering a node from a generator, source or storage.

    If ``link`` is set to ``(carrier, node, factor)`` the injection's intensity
    is ``factor`` times that node's intensity (converted energy); otherwise the
    fixed ``intensity`` applies.
    """

    node: str
    amount: float
    intensity: float = 0.0
    tag: str = ""
    link: tuple[str, str, float] | None = None


@dataclass(frozen=True)
class Withdrawal:
    node: str
    amount: float
    tag: str = ""
    conversion: bool = False  # energy converted on site (its carbon reappears in a linked injection)


@dataclass(frozen=True)
class CompressorUse:
    pipe_id: str
    e_consumption: float
    elec_node: str


@dataclass
class FlowSnapshot:
    elec_lines: list[Line] = field(default_factory=list)
    elec_injections: list[Injection] = field(default_factory=list)
    elec_loads: list[Withdrawal] = field(default_factory=list)
    gas_pipes: list[Line] = field(default_factory=list)  # volumetric m3
    gas_sources: list[Injection] = field(default_factory=list)  # volumetric m3, intensity per MWh
    gas_loads: list[Withdrawal] = field(default_factory=list)  # volumetric m3
    compressors: list[CompressorUse] = field(default_factory=list)
    heat_injections: list[Injection] = field(default_factory=list)
    heat_loads: list[Withdrawal] = field(default_factory=list)
    calorific_b: float = 0.01  # MWh per m3
    captured: float = 0.0  # tCO2 removed by capture in this snapshot

    def check(self, tol: float = 1e-6) -> None:
        """Nonnegativity and nodal conservation on all three carriers."""
        items = (self.elec_lines + self.gas_pipes + self.elec_injections + self.gas_sources
                 + self.heat_injections + self.elec_loads + self.gas_loads + self.heat_loads)
        for it in items:
            val = it.flow if isinstance(it, Line) else it.amount
            if val < -tol:
                raise ValueError(f"negative flow in snapshot: {it}")
        for name, lines, inj, loads in (
            (ELEC, self.elec_lines, self.elec_injections, self.elec_loads),
            (GAS, self.gas_pipes, self.gas_sources, self.gas_loads),
            (HEAT, [], self.heat_injections, self.heat_loads),
        ):
            bal: dict[str, float] = defaultdict(float)
            scale: dict[str, float] = defaultdict(lambda: 1.0)
            for ln in lines:
                bal[ln.dst] += ln.flow
                bal[ln.src] -= ln.flow
                scale[ln.dst] = max(scale[ln.dst], abs(ln.flow))
                scale[ln.src] = max(scale[ln.src], abs(ln.flow))
            for j in inj:
                bal[j.node] += j.amount
                scale[j.node] = max(scale[j.node], abs(j.amount))
            for w in loads:
                bal[w.node] -= w.amount
                scale[w.node] = max(scale[w.node], abs(w.amount))
            for node, b in bal.items():
                if abs(b) > tol * scale[node]:
                    raise ValueError(f"{name} node {node} is unbalanced by {b:.3e}")


@dataclass
class IntensityMap:
    electricity: dict[str, float]
    gas: dict[str, float]  # tCO2 per MWh of gas
    heat: dict[str, float]

    def of(self, carrier: str, node: str) -> float:
        table = getattr(self, carrier)
        if node not in table:
            raise MissingNodeError(f"{carrier} node {node} has no intensity")
        return table[node]


def _topological(nodes: Iterable[str], lines: list[Line]) -> list[str]:
    nodes = list(dict.fromkeys(nodes))
    indeg = {n: 0 for n in nodes}
    out = defaultdict(list)
    for ln in lines:
        if ln.flow <= 0:
            continue
        indeg.setdefault(ln.src, 0)
        indeg[ln.dst] = indeg.get(ln.dst, 0) + 1
        out[ln.src].append(ln.dst)
    ready = [n for n, d in indeg.items() if d == 0]
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for m in out[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
    if len(order) != len(indeg):
        raise UnsupportedTopologyError("flow orientation contains a cycle")
    return order


def _mix(order: list[str], lines: list[Line], inj: list[tuple[str, float, float]],
         extra: Mapping[str, list[tuple[float, float]]] | None = None) -> dict[str, float]:
    """Proportional mixing in topological order.

    ``inj`` holds ``(node, energy, intensity)``; ``extra`` adds per-node
    ``(emission, energy)`` pairs carried by inflows beyond ``energy * intensity``.
    """
    emis = defaultdict(float)
    energy = defaultdict(float)
    for node, e, i in inj:
        emis[node] += e * i
        energy[node] += e
    incoming = defaultdict(list)
    for ln in lines:
        if ln.flow > 0:
            incoming[ln.dst].append(ln)
    result = {}
    for n in order:
        em = emis[n]
        en = energy[n]
        for ln in incoming[n]:
            em += result[ln.src] * ln.flow
            en += ln.flow
        if extra:
            for add_em, _ in extra.get(n, []):
                em += add_em
        result[n] = em / en if en > 0 else 0.0
    return result


def _injection_intensity(j: Injection, current: IntensityMap | None) -> float:
    if j.link is None:
        return j.intensity
    if current is None:
        return 0.0
    carrier, node, factor = j.link
    return factor * getattr(current, carrier).get(node, 0.0)


def electricity_intensities(snapshot: FlowSnapshot, nodes: Iterable[str] = (),
                            current: IntensityMap | None = None) -> dict[str, float]:
    """Nodal electricity intensities.

    ``current`` supplies intensities for linked injections (for example CHP
    output that depends on the gas it burns).
    """
    all_nodes = list(nodes) + [j.node for j in snapshot.elec_injections] + [w.node for w in snapshot.elec_loads]
    for ln in snapshot.elec_lines:
        all_nodes += [ln.src, ln.dst]
    order = _topological(all_nodes, snapshot.elec_lines)
    inj = [(j.node, j.amount, _injection_intensity(j, current)) for j in snapshot.elec_injections]
    return _mix(order, snapshot.elec_lines, inj)


def gas_intensities(snapshot: FlowSnapshot, elec_int: Mapping[str, float], nodes: Iterable[str] = (),
                    current: IntensityMap | None = None) -> dict[str, float]:
    """Nodal gas intensities in tCO2 per MWh of gas.

    Pipeline emissions are the upstream intensity times the carried energy plus
    the emissions of the compressor's electricity.
    """
    B = snapshot.calorific_b
    all_nodes = list(nodes) + [j.node for j in snapshot.gas_sources] + [w.node for w in snapshot.gas_loads]
    for ln in snapshot.gas_pipes:
        all_nodes += [ln.src, ln.dst]
    order = _topological(all_nodes, snapshot.gas_pipes)
    pipes_mwh = [Line(p.src, p.dst, p.flow * B, p.id) for p in snapshot.gas_pipes]
    comp_em: dict[str, list[tuple[float, float]]] = defaultdict(list)
    pipe_dst = {p.id: p.dst for p in snapshot.gas_pipes if p.flow > 0}
    for c in snapshot.compressors:
        if c.pipe_id not in pipe_dst:
            continue
        if c.elec_node not in elec_int:
            raise MissingNodeError(f"compressor electricity node {c.elec_node} has no intensity")
        comp_em[pipe_dst[c.pipe_id]].append((elec_int[c.elec_node] * c.e_consumption, 0.0))
    inj = [(j.node, j.amount * B, _injection_intensity(j, current)) for j in snapshot.gas_sources]
    result = _mix(order, pipes_mwh, inj, comp_em)
    supplied = defaultdict(float)
    for n, e, _ in inj:
        supplied[n] += e
    for p in pipes_mwh:
        if p.flow > 0:
            supplied[p.dst] += p.flow
    for w in snapshot.gas_loads:
        if w.amount > 0 and supplied[w.node] <= 0:
            raise InfeasibleSnapshotError(f"gas node {w.node} withdraws gas but receives none")
    return result


def heat_intensities(snapshot: FlowSnapshot, nodes: Iterable[str] = (),
                     current: IntensityMap | None = None) -> dict[str, float]:
    all_nodes = list(nodes) + [j.node for j in snapshot.heat_injections] + [w.node for w in snapshot.heat_loads]
    order = _topological(all_nodes, [])
    inj = [(j.node, j.amount, _injection_intensity(j, current)) for j in snapshot.heat_injections]
    return _mix(order, [], inj)


def trace(snapshot: FlowSnapshot, elec_nodes: Iterable[str] = (), gas_nodes: Iterable[str] = (),
          heat_nodes: Iterable[str] = (), tol: float = 1e-14, max_iter: int = 500) -> IntensityMap:
    """Intensities on all carriers, resolving cross-carrier links by fixed-point iteration.

    Starting from zero the iterates increase monotonically toward the least
    fixed point because every link factor is nonnegative.
    """
    elec_nodes, gas_nodes, heat_nodes = list(elec_nodes), list(gas_nodes), list(heat_nodes)
    current = None
    for _ in range(max_iter):
        e = electricity_intensities(snapshot, elec_nodes, current)
        g = gas_intensities(snapshot, e, gas_nodes, current)
        h = heat_intensities(snapshot, heat_nodes, current)
        nxt = IntensityMap(e, g, h)
        if current is not None:
            diff = max(
                max((abs(nxt.electricity[k] - current.electricity.get(k, 0.0)) for k in nxt.electricity), default=0.0),
                max((abs(nxt.gas[k] - current.gas.get(k, 0.0)) for k in nxt.gas), default=0.0),
                max((abs(nxt.heat[k] - current.heat.get(k, 0.0)) for k in nxt.heat), default=0.0),
            )
            if diff <= tol:
                return nxt
        current = nxt
    raise UnsupportedTopologyError("cross-carrier intensity links did not converge")


@dataclass
class EmissionBalance:
    source: float  # primary injections (plants, wells, storage discharge)
    sinks: float  # terminal withdrawals (demands, exports, storage charging)
    captured: float

    @property
    def mismatch(self) -> float:
        return self.sinks + self.captured - self.source

    @property
    def relative_mismatch(self) -> float:
        return abs(self.mismatch) / max(abs(self.source), 1e-12)


def emission_balance(snapshot: FlowSnapshot, intensities: IntensityMap) -> EmissionBalance:
    """Brute-force bookkeeping of source and sink emissions for a traced snapshot.

    Conversion loads and linked injections cancel and are left out; the source
    side therefore holds only primary injections at their fixed intensities,
    with ``snapshot.captured`` added back to the primary source it came from.
    """
    B = snapshot.calorific_b
    src = 0.0
    for j in snapshot.elec_injections + snapshot.heat_injections:
        if j.link is None:
            src += j.amount * j.intensity
    for j in snapshot.gas_sources:
        if j.link is None:
            src += j.amount * B * j.intensity
    src += snapshot.captured
    sinks = 0.0
    for w in snapshot.elec_loads:
        if not w.conversion:
            sinks += w.amount * intensities.electricity[w.node]
    for w in snapshot.heat_loads:
        if not w.conversion:
            sinks += w.amount * intensities.heat[w.node]
    for w in snapshot.gas_loads:
        if not w.conversion:
            sinks += w.amount * B * intensities.gas[w.node]
    return EmissionBalance(src, sinks, snapshot.captured)


def actual_emissions(ic: IndustrialCluster, intensities: IntensityMap, loads: Mapping[str, Mapping[str, float]],
                     capture_e: float, ccpp: CcppParams, calorific_b: float = 0.01, clamp: bool = True) -> float:
    """Emissions attributed to one IC.

    ``loads`` maps carrier name to ``{node: load}``; gas loads are volumetric.
    With ``clamp`` the result is floored at zero.
    """
    if capture_e > ccpp.capture_max + 1e-9:
        raise ValueError(f"capture {capture_e} exceeds capture_max {ccpp.capture_max}")
    total = 0.0
    for carrier, node_set, mult in ((ELEC, ic.nodes.electricity, 1.0), (GAS, ic.nodes.gas, calorific_b),
                                    (HEAT, ic.nodes.heat, 1.0)):
        for node, amount in loads.get(carrier, {}).items():
            if node not in node_set:
                raise MissingNodeError(f"{carrier} node {node} is not part of IC {ic.id}")
            if amount == 0:
                continue
            total += intensities.of(carrier, node) * amount * mult
    total -= ccpp.eta_cc * ccpp.b_cc * capture_e
    return max(total, 0.0) if clamp else total
