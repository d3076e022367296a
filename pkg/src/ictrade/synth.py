"""Seeded synthetic scenarios: two-peak daily loads, three-tier time-of-use prices, bell-shaped PV.

The default park has four industrial clusters. Clusters 1 and 4 carry large PV
arrays and small loads (natural sellers); clusters 2 and 3 are load-heavy
(natural buyers). Gas can move 1 -> 2 and 4 -> 3 through compressor pipelines.
"""
from __future__ import annotations

import copy
import math
from typing import Any

import numpy as np

from .model import ParkModel, build_scenario

# yuan/kWh tiers
VALLEY, FLAT, PEAK = 0.3, 0.6, 1.0
BUYBACK = 0.25
GAS_PRICE = 0.4
CARBON_PRICE = 100.0  # yuan/tCO2

# (electric load scale, heat load scale, pv peak) per cluster
PROFILES = {
    1: (1.0, 0.6, 4.5),
    2: (2.2, 1.1, 0.5),
    3: (2.0, 1.3, 0.5),
    4: (1.1, 0.7, 4.2),
}
GAS_LINKS = {2: (1, "p12"), 3: (4, "p43")}  # buyer -> (seller, pipeline)


def tou_price(hour: int) -> float:
    h = hour % 24
    if h < 8:
        return VALLEY
    if 8 <= h < 12 or 17 <= h < 21:
        return PEAK
    return FLAT


def two_peak_shape(hour: np.ndarray) -> np.ndarray:
    """Daily load shape in [0.45, 1] with peaks near 10:00 and 19:00."""
    h = hour % 24
    bump = np.exp(-0.5 * ((h - 10) / 2.0) ** 2) + 0.9 * np.exp(-0.5 * ((h - 19) / 2.0) ** 2)
    return 0.45 + 0.55 * bump / bump.max()


def pv_shape(hour: np.ndarray) -> np.ndarray:
    h = hour % 24
    return np.where((h >= 6) & (h <= 18), np.sin(np.pi * (h - 6) / 12.0).clip(0, None), 0.0)


def generate_series(horizon: int, ic_ids, seed: int = 0, profiles=None, noise: float = 0.08) -> dict[str, list[float]]:
    """Series columns (prices in yuan/kWh, loads and PV in MWh per hour)."""
    rng = np.random.default_rng(seed)
    profiles = profiles or PROFILES
    hours = np.arange(horizon)
    cols: dict[str, list[float]] = {
        "p_e": [tou_price(int(h)) for h in hours],
        "p_o": [BUYBACK] * horizon,
        "p_g": [GAS_PRICE] * horizon,
        "p_c": [CARBON_PRICE] * horizon,
    }
    shape = two_peak_shape(hours)
    sun = pv_shape(hours)
    days = math.ceil(horizon / 24)
    for ic in ic_ids:
        e_scale, h_scale, pv_peak = profiles[ic]
        jitter = lambda: np.clip(1 + noise * rng.standard_normal(horizon), 0.7, 1.3)
        cloud = np.repeat(rng.uniform(0.6, 1.0, days), 24)[:horizon]
        cols[f"e_load_{ic}"] = list(np.round(e_scale * shape * jitter(), 6))
        cols[f"h_load_{ic}"] = list(np.round(h_scale * (0.8 + 0.2 * shape) * jitter(), 6))
        cols[f"pv_{ic}"] = list(np.round(pv_peak * sun * cloud, 6))
    return cols


def _ic_config(ic: int, gas_node: str, battery_capacity: float = 4.0, quota_factor: float = 0.3) -> dict[str, Any]:
    return {
        "id": ic,
        "battery": {"capacity_max": battery_capacity, "capacity_min": 0.0, "charge_max": 0.4,
                    "discharge_max": 0.4, "level0": battery_capacity / 2},
        "tank": {"capacity_max": 4.0, "capacity_min": 0.0, "charge_max": 0.4, "discharge_max": 0.4,
                 "level0": 2.0},
        "chp": {"corners": {"A": [0.0, 1.0], "B": [1.2, 0.8], "C": [0.6, 0.0], "D": [0.0, 0.0]},
                "gas_per_output": 1.25},
        "boiler": {"eta_bg": 0.85, "h_max": 5.0},
        "p2g": {"eta_p2g": 0.6, "g_max": 1.0},
        "benchmark_factor": quota_factor,
        "nodes": {"electricity": [f"e{ic}"], "gas": [gas_node], "heat": [f"h{ic}"]},
        "plant_limits": {"e_max": 10.0, "g_max": 10.0, "eo_max": 0.5 if PROFILES.get(ic, (0, 0, 0))[2] > 1 else 10.0},
    }


def default_config(n_ics: int = 4, cctcc: bool = True, electricity_trading: bool = True,
                   gas_trading: bool = True, battery_capacity: float = 4.0, quota_factor: float = 0.3,
                   v_requested: float | None = None) -> dict[str, Any]:
    """Scenario document for the four-cluster park (or its first ``n_ics`` clusters)."""
    ids = list(range(1, n_ics + 1))
    gas_nodes = [f"g{i}" for i in ids]
    pipes = []
    for buyer, (seller, pid) in GAS_LINKS.items():
        if buyer in ids and seller in ids:
            pipes.append({"id": pid, "from": f"g{seller}", "to": f"g{buyer}", "weymouth_c": 0.5,
                          "ratio_min": 1.0, "ratio_max": 2.0,
                          "compressor": {"e_consumption": 0.05, "intensity_node": "ccpp"}})
    return {
        "park": {"name": "synthetic", "price_unit": "yuan_per_kwh", "series": ["series.csv"]},
        "carbon": {
            "calorific_kwh_per_m3": 10.0,
            "gas_combustion_kg_per_kwh": 0.2,
            "intensity_gas_gen": 0.3,
            "intensity_coal_gen": 0.85,
            "ccpp": {"eta_cc": 0.85, "b_cc": 0.85, "capture_max": 1.0},
            "cctcc": cctcc,
            "ccppmp_markup": None,
            "green_certificate_price": 0.0,
            "ladder": {"p_c": CARBON_PRICE, "alpha": 1.0, "beta": 1.0, "l": 5.0, "K": 4},
        },
        "networks": {
            "electricity": {"nodes": ["ccpp", "export"] + [f"e{i}" for i in ids], "ccpp_node": "ccpp",
                            "export_node": "export", "ccpp_intensity": 0.85},
            "gas": {"nodes": [{"id": g, "pressure_min": 1.0, "pressure_max": 6.0} for g in gas_nodes],
                    "pipelines": pipes, "sources": gas_nodes},
            "heat": {"nodes": [f"h{i}" for i in ids]},
        },
        "ics": [_ic_config(i, f"g{i}", battery_capacity, quota_factor) for i in ids],
        "market": {"lambda_buy": 0.75, "lambda_sell": 0.25, "electricity_trading": electricity_trading,
                   "gas_trading": gas_trading, "gas_floor_ratio": 0.5, "trade_cap": 2.0},
        "control": {"price_ref": 1000.0, "v_requested": v_requested, "sigma1": 0.25, "sigma_decay": 0.5,
                    "delta": 1e-3, "max_iter": 12},
    }


def synthetic_park(horizon: int = 24 * 7, seed: int = 0, n_ics: int = 4, **overrides) -> ParkModel:
    """Validated default park with seeded series of length ``horizon``."""
    config = default_config(n_ics=n_ics, **overrides)
    cols = generate_series(horizon, range(1, n_ics + 1), seed=seed)
    return build_scenario(config, cols)


def single_ic_config(**overrides) -> dict[str, Any]:
    """One cluster with its own gas node and no pipelines."""
    cfg = copy.deepcopy(default_config(n_ics=1, **overrides))
    cfg["networks"]["gas"]["pipelines"] = []
    return cfg
