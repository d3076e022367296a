"""Static park description: industrial clusters, devices, networks and tariffs.

Everything internal is MWh / yuan / tCO2. The scenario file may state prices in
yuan per kWh (as most published tariffs do); :func:`load_scenario` converts them
on ingest.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

KWH_PER_MWH = 1000.0


class ScenarioError(ValueError):
    """Base class for problems found while loading a scenario."""


class SchemaError(ScenarioError):
    """A required field is missing or has the wrong shape."""


class InvariantError(ScenarioError):
    """A loaded entity violates one of its consistency rules."""

    def __init__(self, entity: str, rule: str):
        super().__init__(f"{entity}: {rule}")
        self.entity = entity
        self.rule = rule


class HorizonError(ScenarioError):
    """Time series disagree on their length or are too short."""


# ---------------------------------------------------------------------------
# Devices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Storage:
    capacity_max: float
    capacity_min: float
    charge_max: float
    discharge_max: float
    level0: float

    def check(self, entity: str) -> None:
        if not 0.0 <= self.capacity_min <= self.level0 <= self.capacity_max:
            raise InvariantError(entity, "require 0 <= capacity_min <= level0 <= capacity_max")
        if self.charge_max < 0 or self.discharge_max < 0:
            raise InvariantError(entity, "charge/discharge limits must be >= 0")


class Battery(Storage):
    pass


class WaterTank(Storage):
    pass


@dataclass(frozen=True)
class ChpUnit:
    """CHP feasible polygon given by corners A..D as (heat, electricity) pairs."""

    corners: tuple[tuple[float, float], ...]
    gas_per_output: float

    @property
    def A(self) -> tuple[float, float]:
        return self.corners[0]

    @property
    def B(self) -> tuple[float, float]:
        return self.corners[1]

    @property
    def C(self) -> tuple[float, float]:
        return self.corners[2]

    @property
    def D(self) -> tuple[float, float]:
        return self.corners[3]

    def half_planes(self) -> list[tuple[float, float, float]]:
        """Return rows (a_h, a_e, r) meaning a_h*H + a_e*E <= r.

        The three edge constraints come first (under AB, above BC, above CD),
        followed by the heat and electricity boxes.
        """
        (ha, ea), (hb, eb), (hc, ec), (hd, ed) = self.corners
        s_ab = (ea - eb) / (ha - hb)
        s_bc = (eb - ec) / (hb - hc)
        s_cd = (ec - ed) / (hc - hd)
        return [
            # E - E_A - s_ab (H - H_A) <= 0
            (-s_ab, 1.0, ea - s_ab * ha),
            # E - E_B - s_bc (H - H_B) >= 0
            (s_bc, -1.0, s_bc * hb - eb),
            # E - E_C - s_cd (H - H_C) >= 0
            (s_cd, -1.0, s_cd * hc - ec),
            (1.0, 0.0, hb),
            (-1.0, 0.0, 0.0),
            (0.0, 1.0, ea),
            (0.0, -1.0, 0.0),
        ]

    def check(self, entity: str) -> None:
        if len(self.corners) != 4:
            raise InvariantError(entity, "CHP needs exactly four corners A, B, C, D")
        (ha, ea), (hb, eb), (hc, ec), (hd, ed) = self.corners
        if not ha < hb:
            raise InvariantError(entity, "require H_A < H_B")
        if hb == hc or hc == hd:
            raise InvariantError(entity, "edges BC and CD must not be vertical")
        if any(e > ea for _, e in self.corners):
            raise InvariantError(entity, "E_A must be the maximum electric output")
        if any(h < 0 or e < 0 for h, e in self.corners):
            raise InvariantError(entity, "corners must be nonnegative")
        # signed area of A, B, C, D
        pts = self.corners
        area = 0.5 * sum(
            pts[k][0] * pts[(k + 1) % 4][1] - pts[(k + 1) % 4][0] * pts[k][1] for k in range(4)
        )
        if abs(area) < 1e-12:
            raise InvariantError(entity, "CHP polygon is degenerate")
        for k, (h, e) in enumerate(pts):
            if not validate_chp_point(self, h, e, tol=1e-9):
                raise InvariantError(entity, f"corner {'ABCD'[k]} lies outside its own polygon")
        if self.gas_per_output <= 0:
            raise InvariantError(entity, "gas_per_output must be positive")


@dataclass(frozen=True)
class Boiler:
    eta_bg: float
    h_max: float

    def check(self, entity: str) -> None:
        if not 0.0 < self.eta_bg <= 1.0:
            raise InvariantError(entity, "eta_bg must lie in (0, 1]")
        if self.h_max < 0:
            raise InvariantError(entity, "h_max must be >= 0")


@dataclass(frozen=True)
class PvPanel:
    cap_profile: tuple[float, ...]

    def check(self, entity: str) -> None:
        if any(v < 0 for v in self.cap_profile):
            raise InvariantError(entity, "PV availability must be >= 0")


@dataclass(frozen=True)
class P2gUnit:
    eta_p2g: float
    g_max: float

    def check(self, entity: str) -> None:
        if not 0.0 < self.eta_p2g <= 1.0:
            raise InvariantError(entity, "eta_p2g must lie in (0, 1]")
        if self.g_max < 0:
            raise InvariantError(entity, "g_max must be >= 0")


@dataclass(frozen=True)
class PlantLimits:
    e_max: float
    g_max: float
    eo_max: float


@dataclass(frozen=True)
class NodeSets:
    electricity: tuple[str, ...]
    gas: tuple[str, ...]
    heat: tuple[str, ...]


@dataclass(frozen=True)
class IndustrialCluster:
    id: int
    battery: Battery
    tank: WaterTank
    chp: ChpUnit
    boiler: Boiler
    pv: PvPanel
    p2g: P2gUnit
    quota_daily: float
    nodes: NodeSets
    limits: PlantLimits

    @property
    def e_node(self) -> str:
        return self.nodes.electricity[0]

    @property
    def g_node(self) -> str:
        return self.nodes.gas[0]

    @property
    def h_node(self) -> str:
        return self.nodes.heat[0]

    def check(self) -> None:
        name = f"IC {self.id}"
        self.battery.check(f"{name} battery")
        self.tank.check(f"{name} tank")
        self.chp.check(f"{name} chp")
        self.boiler.check(f"{name} boiler")
        self.pv.check(f"{name} pv")
        self.p2g.check(f"{name} p2g")
        if self.quota_daily < 0:
            raise InvariantError(name, "quota_daily must be >= 0")
        lim = self.limits
        if min(lim.e_max, lim.g_max, lim.eo_max) < 0:
            raise InvariantError(name, "plant limits must be >= 0")
        for kind in ("electricity", "gas", "heat"):
            if not getattr(self.nodes, kind):
                raise InvariantError(name, f"needs at least one {kind} node")


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Compressor:
    e_consumption: float
    intensity_node: str

    def check(self, entity: str) -> None:
        if self.e_consumption < 0:
            raise InvariantError(entity, "compressor e_consumption must be >= 0")


@dataclass(frozen=True)
class GasNode:
    id: str
    pressure_min: float
    pressure_max: float


@dataclass(frozen=True)
class Pipeline:
    id: str
    from_node: str
    to_node: str
    weymouth_c: float
    ratio_min: float = 1.0
    ratio_max: float = math.inf
    compressor: Compressor | None = None


@dataclass(frozen=True)
class GasNetwork:
    nodes: tuple[GasNode, ...]
    pipelines: tuple[Pipeline, ...]
    sources: tuple[str, ...]

    def node(self, node_id: str) -> GasNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def pipeline(self, pipe_id: str) -> Pipeline:
        for p in self.pipelines:
            if p.id == pipe_id:
                return p
        raise KeyError(pipe_id)

    def pipelines_between(self, from_node: str, to_node: str) -> list[Pipeline]:
        return [p for p in self.pipelines if p.from_node == from_node and p.to_node == to_node]

    def check(self, elec_nodes: set[str]) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise InvariantError("gas network", "duplicate node id")
        for n in self.nodes:
            if not 0 <= n.pressure_min < n.pressure_max:
                raise InvariantError(f"gas node {n.id}", "require 0 <= pressure_min < pressure_max")
        for p in self.pipelines:
            name = f"pipeline {p.id}"
            if p.from_node not in ids or p.to_node not in ids:
                raise InvariantError(name, "references an unknown gas node")
            if p.weymouth_c <= 0:
                raise InvariantError(name, "Weymouth constant must be > 0")
            if not 0 < p.ratio_min <= p.ratio_max:
                raise InvariantError(name, "require 0 < ratio_min <= ratio_max")
            if p.compressor is not None:
                p.compressor.check(name)
                if p.compressor.intensity_node not in elec_nodes:
                    raise InvariantError(name, "compressor draws from an unknown electricity node")
        for s in self.sources:
            if s not in ids:
                raise InvariantError("gas network", f"source {s} is not a gas node")


@dataclass(frozen=True)
class ElectricityNetwork:
    """Park electricity nodes. The CCPP feeds every IC node; exports go to a sink node."""

    nodes: tuple[str, ...]
    ccpp_node: str
    export_node: str
    ccpp_intensity: float

    def check(self) -> None:
        if len(set(self.nodes)) != len(self.nodes):
            raise InvariantError("electricity network", "duplicate node id")
        for n in (self.ccpp_node, self.export_node):
            if n not in self.nodes:
                raise InvariantError("electricity network", f"node {n} missing")
        if self.ccpp_intensity < 0:
            raise InvariantError("electricity network", "ccpp intensity must be >= 0")


# ---------------------------------------------------------------------------
# Carbon and market parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CcppParams:
    eta_cc: float
    b_cc: float
    capture_max: float


@dataclass(frozen=True)
class CarbonParams:
    calorific_b: float  # MWh per m3
    i_gc: float  # tCO2 per MWh of gas burned
    intensity_gas_gen: float
    intensity_coal_gen: float
    ccpp: CcppParams
    cctcc: bool = True
    ccppmp_markup: float | None = None  # None: full capture cost passed through (see sim.tariff_factor)
    green_certificate_price: float = 0.0

    def check(self) -> None:
        vals = [self.calorific_b, self.i_gc, self.intensity_gas_gen, self.intensity_coal_gen,
                self.ccpp.b_cc, self.ccpp.capture_max, self.ccppmp_markup or 0.0,
                self.green_certificate_price]
        if any(v < 0 for v in vals):
            raise InvariantError("carbon", "parameters must be nonnegative")
        if not 0.0 <= self.ccpp.eta_cc <= 1.0:
            raise InvariantError("carbon", "eta_cc must lie in [0, 1]")


@dataclass(frozen=True)
class CarbonLadder:
    p_c: float
    alpha: float
    beta: float
    l: float
    K: int

    def check(self) -> None:
        if self.p_c <= 0 or self.l <= 0:
            raise InvariantError("carbon ladder", "p_c and l must be > 0")
        if self.alpha < 0 or self.beta < 0:
            raise InvariantError("carbon ladder", "alpha and beta must be >= 0")
        if self.K < 1:
            raise InvariantError("carbon ladder", "K must be >= 1")


@dataclass(frozen=True)
class MarketParams:
    lambda_buy: float = 0.75
    lambda_sell: float = 0.25
    electricity_trading: bool = True
    gas_trading: bool = True
    gas_floor_ratio: float = 0.5
    trade_cap: float = 2.0

    def check(self) -> None:
        if not 0.0 < self.lambda_sell < self.lambda_buy < 1.0:
            raise InvariantError("market", "require 0 < lambda_sell < lambda_buy < 1")
        if not 0.0 <= self.gas_floor_ratio < 1.0:
            raise InvariantError("market", "gas_floor_ratio must lie in [0, 1)")
        if self.trade_cap < 0:
            raise InvariantError("market", "trade_cap must be >= 0")


@dataclass(frozen=True)
class ControlParams:
    price_ref: float = 1000.0  # yuan/MWh; prices are divided by this inside the drift-plus-penalty objective
    v_requested: float | None = None  # None -> V^max
    sigma1: float = 0.25
    sigma_decay: float = 0.5
    delta: float = 1e-3
    max_iter: int = 12


@dataclass(frozen=True)
class Series:
    """Hourly exogenous data. Prices in yuan/MWh (p_c in yuan/tCO2), loads in MWh."""

    p_e: tuple[float, ...]
    p_o: tuple[float, ...]
    p_g: tuple[float, ...]
    p_c: tuple[float, ...]
    e_load: Mapping[int, tuple[float, ...]]
    h_load: Mapping[int, tuple[float, ...]]

    @property
    def horizon(self) -> int:
        return len(self.p_e)


@dataclass(frozen=True)
class ParkModel:
    name: str
    ics: tuple[IndustrialCluster, ...]
    electricity: ElectricityNetwork
    gas: GasNetwork
    heat_nodes: tuple[str, ...]
    market: MarketParams
    carbon: CarbonParams
    ladder: CarbonLadder
    control: ControlParams
    series: Series

    @property
    def horizon(self) -> int:
        return self.series.horizon

    def ic(self, ic_id: int) -> IndustrialCluster:
        for c in self.ics:
            if c.id == ic_id:
                return c
        raise KeyError(ic_id)

    def validate(self) -> None:
        ids = [c.id for c in self.ics]
        if len(set(ids)) != len(ids):
            raise InvariantError("park", "IC ids must be unique")
        self.electricity.check()
        self.gas.check(set(self.electricity.nodes))
        self.market.check()
        self.carbon.check()
        self.ladder.check()
        if len(set(self.heat_nodes)) != len(self.heat_nodes):
            raise InvariantError("heat network", "duplicate node id")
        owners: dict[str, str] = {}
        networks = {
            "electricity": set(self.electricity.nodes),
            "gas": {n.id for n in self.gas.nodes},
            "heat": set(self.heat_nodes),
        }
        for kind, nodes in networks.items():
            for n in nodes:
                if n in owners:
                    raise InvariantError(f"node {n}", f"appears in both {owners[n]} and {kind} networks")
                owners[n] = kind
        for c in self.ics:
            c.check()
            for kind in ("electricity", "gas", "heat"):
                for n in getattr(c.nodes, kind):
                    if n not in networks[kind]:
                        raise InvariantError(f"IC {c.id}", f"{kind} node {n} not in the {kind} network")
            if len(c.pv.cap_profile) != self.horizon:
                raise HorizonError(f"IC {c.id}: PV profile has {len(c.pv.cap_profile)} slots, "
                                   f"expected {self.horizon}")
        s = self.series
        for col in ("p_e", "p_o", "p_g", "p_c"):
            vals = getattr(s, col)
            if any(v < 0 for v in vals):
                raise InvariantError("series", f"{col} must be >= 0")
        for c in self.ics:
            for loads, kind in ((s.e_load, "electric"), (s.h_load, "heat")):
                if c.id not in loads:
                    raise SchemaError(f"series: missing {kind} load for IC {c.id}")
                if len(loads[c.id]) != self.horizon:
                    raise HorizonError(f"IC {c.id}: {kind} load length mismatch")
                if any(v < 0 for v in loads[c.id]):
                    raise InvariantError(f"IC {c.id}", f"{kind} load must be >= 0")
        if any(po > pe for po, pe in zip(s.p_o, s.p_e)):
            raise InvariantError("series", "buy-back price p_o must not exceed p_e")


def validate_chp_point(chp: ChpUnit, h: float, e: float, tol: float = 0.0) -> bool:
    """True iff (h, e) lies inside the CHP operating polygon."""
    return all(ah * h + ae * e <= r + tol for ah, ae, r in chp.half_planes())


# ---------------------------------------------------------------------------
# Loading and saving
# ---------------------------------------------------------------------------


def _req(section: Mapping[str, Any], key: str, where: str) -> Any:
    if not isinstance(section, Mapping):
        raise SchemaError(f"{where}: expected a mapping")
    if key not in section:
        raise SchemaError(f"{where}: missing field '{key}'")
    return section[key]


def _storage(cls, d: Mapping[str, Any], where: str):
    try:
        return cls(
            capacity_max=float(_req(d, "capacity_max", where)),
            capacity_min=float(d.get("capacity_min", 0.0)),
            charge_max=float(_req(d, "charge_max", where)),
            discharge_max=float(_req(d, "discharge_max", where)),
            level0=float(_req(d, "level0", where)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise SchemaError(f"{where}: {exc}") from exc


def _read_series(path: Path) -> dict[str, list[float]]:
    if not path.exists():
        raise SchemaError(f"series file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[float]] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for k, v in row.items():
                cols[k].append(float(v))
    return cols


def _column(cols: Mapping[str, list[float]], name: str, src: str) -> list[float]:
    if name not in cols:
        raise SchemaError(f"{src}: missing column '{name}'")
    return cols[name]


def load_scenario(config: Mapping[str, Any] | str | Path, series_dir: str | Path | None = None) -> ParkModel:
    """Parse a scenario document (mapping or YAML path) plus its CSV series into a validated model."""
    if isinstance(config, (str, Path)):
        cfg_path = Path(config)
        if not cfg_path.exists():
            raise SchemaError(f"config file not found: {cfg_path}")
        with cfg_path.open() as fh:
            config = yaml.safe_load(fh)
        if series_dir is None:
            series_dir = cfg_path.parent
    if series_dir is None:
        raise SchemaError("series_dir is required when config is given as a mapping")
    series_dir = Path(series_dir)

    park = _req(config, "park", "config")
    series_files = park.get("series", ["series.csv"])
    if isinstance(series_files, str):
        series_files = [series_files]
    cols: dict[str, list[float]] = {}
    for fname in series_files:
        cols.update(_read_series(series_dir / fname))
    return build_scenario(config, cols)


def build_scenario(config: Mapping[str, Any], cols: Mapping[str, list[float]]) -> ParkModel:
    """Build a validated model from a parsed scenario document and its series columns."""
    park = _req(config, "park", "config")
    name = str(park.get("name", "park"))
    price_unit = park.get("price_unit", "yuan_per_kwh")
    if price_unit not in ("yuan_per_kwh", "yuan_per_mwh"):
        raise SchemaError(f"park.price_unit: unknown unit {price_unit!r}")
    price_scale = KWH_PER_MWH if price_unit == "yuan_per_kwh" else 1.0

    lengths = {len(v) for v in cols.values()}
    if len(lengths) != 1:
        raise HorizonError(f"time series have different lengths: {sorted(lengths)}")
    horizon = lengths.pop()
    if horizon == 0:
        raise HorizonError("time series are empty")
    if "horizon" in park and int(park["horizon"]) > horizon:
        raise HorizonError(f"park.horizon={park['horizon']} exceeds series length {horizon}")
    src = "series"

    carbon_cfg = _req(config, "carbon", "config")
    ccpp_cfg = _req(carbon_cfg, "ccpp", "carbon")
    carbon = CarbonParams(
        calorific_b=float(carbon_cfg.get("calorific_kwh_per_m3", 10.0)) / KWH_PER_MWH,
        i_gc=float(carbon_cfg.get("gas_combustion_kg_per_kwh", 0.2)),  # kg/kWh == t/MWh
        intensity_gas_gen=float(carbon_cfg.get("intensity_gas_gen", 0.3)),
        intensity_coal_gen=float(carbon_cfg.get("intensity_coal_gen", 0.85)),
        ccpp=CcppParams(
            eta_cc=float(_req(ccpp_cfg, "eta_cc", "carbon.ccpp")),
            b_cc=float(_req(ccpp_cfg, "b_cc", "carbon.ccpp")),
            capture_max=float(_req(ccpp_cfg, "capture_max", "carbon.ccpp")),
        ),
        cctcc=bool(carbon_cfg.get("cctcc", True)),
        ccppmp_markup=None if carbon_cfg.get("ccppmp_markup") is None else float(carbon_cfg["ccppmp_markup"]),
        green_certificate_price=float(carbon_cfg.get("green_certificate_price", 0.0)),
    )
    lad = _req(carbon_cfg, "ladder", "carbon")
    ladder = CarbonLadder(
        p_c=float(_req(lad, "p_c", "carbon.ladder")),
        alpha=float(_req(lad, "alpha", "carbon.ladder")),
        beta=float(_req(lad, "beta", "carbon.ladder")),
        l=float(_req(lad, "l", "carbon.ladder")),
        K=int(_req(lad, "K", "carbon.ladder")),
    )

    net = _req(config, "networks", "config")
    el = _req(net, "electricity", "networks")
    electricity = ElectricityNetwork(
        nodes=tuple(str(n) for n in _req(el, "nodes", "networks.electricity")),
        ccpp_node=str(_req(el, "ccpp_node", "networks.electricity")),
        export_node=str(_req(el, "export_node", "networks.electricity")),
        ccpp_intensity=float(el.get("ccpp_intensity", carbon.ccpp.b_cc)),
    )
    gas_cfg = _req(net, "gas", "networks")
    gnodes = tuple(
        GasNode(str(_req(n, "id", "gas node")), float(_req(n, "pressure_min", "gas node")),
                float(_req(n, "pressure_max", "gas node")))
        for n in _req(gas_cfg, "nodes", "networks.gas")
    )
    pipes = []
    for p in gas_cfg.get("pipelines", []) or []:
        comp = p.get("compressor")
        pipes.append(Pipeline(
            id=str(_req(p, "id", "pipeline")),
            from_node=str(_req(p, "from", "pipeline")),
            to_node=str(_req(p, "to", "pipeline")),
            weymouth_c=float(_req(p, "weymouth_c", "pipeline")),
            ratio_min=float(p.get("ratio_min", 1.0)),
            ratio_max=float(p.get("ratio_max", math.inf)),
            compressor=None if comp is None else Compressor(
                e_consumption=float(_req(comp, "e_consumption", "compressor")),
                intensity_node=str(_req(comp, "intensity_node", "compressor")),
            ),
        ))
    gas = GasNetwork(nodes=gnodes, pipelines=tuple(pipes),
                     sources=tuple(str(s) for s in gas_cfg.get("sources", []) or []))
    heat_nodes = tuple(str(n) for n in _req(_req(net, "heat", "networks"), "nodes", "networks.heat"))

    p_e = [v * price_scale for v in _column(cols, "p_e", src)]
    p_o = [v * price_scale for v in _column(cols, "p_o", src)]
    p_g = [v * price_scale for v in _column(cols, "p_g", src)]
    p_c = list(_column(cols, "p_c", src))

    ics = []
    e_load: dict[int, tuple[float, ...]] = {}
    h_load: dict[int, tuple[float, ...]] = {}
    for k, d in enumerate(_req(config, "ics", "config")):
        where = f"ics[{k}]"
        ic_id = int(_req(d, "id", where))
        e_load[ic_id] = tuple(_column(cols, f"e_load_{ic_id}", src))
        h_load[ic_id] = tuple(_column(cols, f"h_load_{ic_id}", src))
        chp_cfg = _req(d, "chp", where)
        corners = _req(chp_cfg, "corners", f"{where}.chp")
        try:
            corner_t = tuple((float(corners[c][0]), float(corners[c][1])) for c in "ABCD")
        except (KeyError, IndexError, TypeError) as exc:
            raise SchemaError(f"{where}.chp.corners: need A, B, C, D as [H, E]") from exc
        boiler_cfg = _req(d, "boiler", where)
        p2g_cfg = _req(d, "p2g", where)
        lim = _req(d, "plant_limits", where)
        nodes = _req(d, "nodes", where)
        if "quota_daily" in d:
            quota = float(d["quota_daily"])
        else:
            factor = float(_req(d, "benchmark_factor", where))
            days = horizon / 24.0
            quota = float(factor * (sum(e_load[ic_id]) + sum(h_load[ic_id])) / days)
        ics.append(IndustrialCluster(
            id=ic_id,
            battery=_storage(Battery, _req(d, "battery", where), f"{where}.battery"),
            tank=_storage(WaterTank, _req(d, "tank", where), f"{where}.tank"),
            chp=ChpUnit(corners=corner_t, gas_per_output=float(_req(chp_cfg, "gas_per_output", f"{where}.chp"))),
            boiler=Boiler(eta_bg=float(_req(boiler_cfg, "eta_bg", f"{where}.boiler")),
                          h_max=float(_req(boiler_cfg, "h_max", f"{where}.boiler"))),
            pv=PvPanel(cap_profile=tuple(_column(cols, f"pv_{ic_id}", src))),
            p2g=P2gUnit(eta_p2g=float(_req(p2g_cfg, "eta_p2g", f"{where}.p2g")),
                        g_max=float(_req(p2g_cfg, "g_max", f"{where}.p2g"))),
            quota_daily=quota,
            nodes=NodeSets(
                electricity=tuple(str(n) for n in _req(nodes, "electricity", f"{where}.nodes")),
                gas=tuple(str(n) for n in _req(nodes, "gas", f"{where}.nodes")),
                heat=tuple(str(n) for n in _req(nodes, "heat", f"{where}.nodes")),
            ),
            limits=PlantLimits(e_max=float(_req(lim, "e_max", f"{where}.plant_limits")),
                               g_max=float(_req(lim, "g_max", f"{where}.plant_limits")),
                               eo_max=float(_req(lim, "eo_max", f"{where}.plant_limits"))),
        ))

    mk = config.get("market", {}) or {}
    market = MarketParams(**{k: mk[k] for k in MarketParams.__dataclass_fields__ if k in mk})
    ctl = config.get("control", {}) or {}
    control = ControlParams(**{k: ctl[k] for k in ControlParams.__dataclass_fields__ if k in ctl})

    model = ParkModel(
        name=name,
        ics=tuple(ics),
        electricity=electricity,
        gas=gas,
        heat_nodes=heat_nodes,
        market=market,
        carbon=carbon,
        ladder=ladder,
        control=control,
        series=Series(p_e=tuple(p_e), p_o=tuple(p_o), p_g=tuple(p_g), p_c=tuple(p_c),
                      e_load=e_load, h_load=h_load),
    )
    model.validate()
    return model


def scenario_to_config(model: ParkModel) -> tuple[dict[str, Any], dict[str, list[float]]]:
    """Inverse of :func:`load_scenario`: a config mapping plus series columns (prices in yuan/MWh)."""
    s = model.series
    cols: dict[str, list[float]] = {
        "p_e": list(s.p_e), "p_o": list(s.p_o), "p_g": list(s.p_g), "p_c": list(s.p_c),
    }
    ics = []
    for c in model.ics:
        cols[f"e_load_{c.id}"] = list(s.e_load[c.id])
        cols[f"h_load_{c.id}"] = list(s.h_load[c.id])
        cols[f"pv_{c.id}"] = list(c.pv.cap_profile)
        ics.append({
            "id": c.id,
            "battery": asdict(c.battery),
            "tank": asdict(c.tank),
            "chp": {"corners": {k: list(v) for k, v in zip("ABCD", c.chp.corners)},
                    "gas_per_output": c.chp.gas_per_output},
            "boiler": asdict(c.boiler),
            "p2g": asdict(c.p2g),
            "quota_daily": c.quota_daily,
            "nodes": {k: list(v) for k, v in asdict(c.nodes).items()},
            "plant_limits": asdict(c.limits),
        })
    pipes = []
    for p in model.gas.pipelines:
        d = {"id": p.id, "from": p.from_node, "to": p.to_node, "weymouth_c": p.weymouth_c,
             "ratio_min": p.ratio_min, "ratio_max": p.ratio_max}
        if p.compressor is not None:
            d["compressor"] = asdict(p.compressor)
        pipes.append(d)
    cb = model.carbon
    config = {
        "park": {"name": model.name, "price_unit": "yuan_per_mwh", "series": ["series.csv"]},
        "ics": ics,
        "networks": {
            "electricity": {"nodes": list(model.electricity.nodes),
                            "ccpp_node": model.electricity.ccpp_node,
                            "export_node": model.electricity.export_node,
                            "ccpp_intensity": model.electricity.ccpp_intensity},
            "gas": {"nodes": [asdict(n) for n in model.gas.nodes], "pipelines": pipes,
                    "sources": list(model.gas.sources)},
            "heat": {"nodes": list(model.heat_nodes)},
        },
        "market": asdict(model.market),
        "carbon": {
            "calorific_kwh_per_m3": cb.calorific_b * KWH_PER_MWH,
            "gas_combustion_kg_per_kwh": cb.i_gc,
            "intensity_gas_gen": cb.intensity_gas_gen,
            "intensity_coal_gen": cb.intensity_coal_gen,
            "ccpp": asdict(cb.ccpp),
            "cctcc": cb.cctcc,
            "ccppmp_markup": cb.ccppmp_markup,
            "green_certificate_price": cb.green_certificate_price,
            "ladder": asdict(model.ladder),
        },
        "control": asdict(model.control),
    }
    return config, cols


def write_series(path: Path, cols: Mapping[str, list[float]]) -> None:
    names = list(cols)
    n = len(next(iter(cols.values())))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for t in range(n):
            w.writerow([repr(float(cols[k][t])) for k in names])


def save_scenario(model: ParkModel, out_dir: str | Path) -> Path:
    """Write ``scenario.yaml`` and ``series.csv`` into ``out_dir``; returns the config path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config, cols = scenario_to_config(model)
    write_series(out / "series.csv", cols)
    cfg_path = out / "scenario.yaml"
    with cfg_path.open("w") as fh:
        yaml.safe_dump(config, fh, sort_keys=False)
    return cfg_path


def replace_series(model: ParkModel, **changes: Any) -> ParkModel:
    """Return a copy of ``model`` with selected series fields replaced."""
    return replace(model, series=replace(model.series, **changes))


__all__ = [
    "Battery", "WaterTank", "Storage", "ChpUnit", "Boiler", "PvPanel", "P2gUnit", "PlantLimits",
    "NodeSets", "IndustrialCluster", "Compressor", "GasNode", "Pipeline", "GasNetwork",
    "ElectricityNetwork", "CcppParams", "CarbonParams", "CarbonLadder", "MarketParams",
    "ControlParams", "Series", "ParkModel", "ScenarioError", "SchemaError", "InvariantError",
    "HorizonError", "build_scenario", "load_scenario", "save_scenario", "scenario_to_config", "validate_chp_point",
    "write_series", "replace_series",
]
