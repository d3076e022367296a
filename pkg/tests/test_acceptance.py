"""End-to-end acceptance checks; each test records one PASS/FAIL line."""
import time

import numpy as np
import pytest

from ictrade import sim
from ictrade.carbon_market import CarbonPosition, ladder_cost
from ictrade.lyapunov import drift_constant
from ictrade.matching import BUYER, ELECTRICITY, SELLER, Order, blocking_pairs, match
from ictrade.model import build_scenario
from ictrade.relax_check import validate_corpus
from ictrade.synth import generate_series, single_ic_config, synthetic_park, tou_price

from oracles import ladder_integral, stable

SEEDS = (0, 1, 2)
WEEK = 24 * 7


@pytest.fixture(scope="module")
def week_runs():
    """Proposed policy and every comparison variant over one week per seed."""
    t0 = time.perf_counter()
    out = {}
    for seed in SEEDS:
        m = synthetic_park(horizon=WEEK, seed=seed)
        variants = {
            "base": (m, "lyapunov"),
            "no_trading": (sim.with_trading(m, False, False), "lyapunov"),
            "cctcc_off": (sim.with_cctcc(m, False), "lyapunov"),
            "storage_1": (sim.with_storage(m, 1.0), "lyapunov"),
            "storage_2": (sim.with_storage(m, 2.0), "lyapunov"),
            "greedy": (m, "greedy"),
            "no_renewables": (sim.without_renewables(m), "lyapunov"),
        }
        out[seed] = {k: sim.run_simulation(mm, pol, seed=seed) for k, (mm, pol) in variants.items()}
    return out, time.perf_counter() - t0


def test_criterion_1_ladder_oracle(park24, criterion):
    lad = park24.ladder
    assert (lad.p_c, lad.l, lad.alpha, lad.beta) == (100.0, 5.0, 1.0, 1.0)
    rng = np.random.default_rng(2024)
    span = (lad.K + 1) * lad.l
    quota = rng.uniform(span, 4 * span, 1000)
    actual = quota + rng.uniform(-span, span, 1000)
    t0 = time.perf_counter()
    got = [ladder_cost(CarbonPosition(q, a), lad) for q, a in zip(quota, actual)]
    elapsed = time.perf_counter() - t0
    want = [ladder_integral(a - q, lad.p_c, lad.l, lad.alpha, lad.beta, lad.K) for q, a in zip(quota, actual)]
    err = float(np.max(np.abs(np.array(got) - np.array(want))))
    criterion(1, err <= 1e-9 and elapsed < 1.0, f"max abs error {err:.2e} over 1000 pairs in {elapsed:.3f} s")


def test_criterion_2_storage_bounded(criterion):
    model = build_scenario(single_ic_config(), generate_series(24, [1], seed=0))
    ic = model.ic(1)
    assert ic.battery.capacity_max == ic.tank.capacity_max == 4.0
    k, T = 100, 10_000
    rng = np.random.default_rng(7)
    tou = np.array([tou_price(h) for h in range(T)]) * 1000.0
    runs = {"p_e": tou * rng.uniform(0.8, 1.2, (k, T)), "p_o": np.full((k, T), 250.0),
            "p_g": 400.0 * rng.uniform(0.8, 1.2, (k, T)), "e_load": rng.uniform(0.3, 2.0, (k, T)),
            "h_load": rng.uniform(0.3, 1.5, (k, T)), "pv": rng.uniform(0.0, 3.0, (k, T))}
    t0 = time.perf_counter()
    res = sim.run_single_ic_batch(model, 1, runs, carbon_price=100.0)
    elapsed = time.perf_counter() - t0
    viol = int(res.violations.sum())
    ok = viol == 0 and res.unconverged == 0 and elapsed < 300
    criterion(2, ok, f"{viol} violations in {k}x{T} slots, B in [{res.battery_min.min():.4f}, "
                     f"{res.battery_max.max():.4f}], W in [{res.tank_min.min():.4f}, {res.tank_max.max():.4f}], "
                     f"V={res.params.V:.3f}, {elapsed:.0f} s")


def test_criterion_3_optimality_gap(criterion):
    worst = -np.inf
    ok = True
    slow = 0.0
    for seed in SEEDS:
        base = synthetic_park(horizon=24, seed=seed, n_ics=2)
        base = sim.with_trading(sim.with_carbon_price_series(base, 0.0), False, False)
        oracle = sim.run_simulation(base, "oracle")
        gaps = {}
        for v in (1.0, 2.0, 3.2):
            t0 = time.perf_counter()
            online = sim.run_simulation(sim.with_v(base, v))
            slow = max(slow, time.perf_counter() - t0)
            for ic in base.ics:
                V = online.params[ic.id].V
                assert V == pytest.approx(v)
                gap = (online.ic_energy_cost(ic.id) - oracle.ic_energy_cost(ic.id)) / base.control.price_ref / 24
                gaps[(v, ic.id)] = gap
                ok &= gap <= drift_constant(ic) / V + 1e-4
                worst = max(worst, gap - drift_constant(ic) / V)
        for ic in base.ics:
            ok &= gaps[(3.2, ic.id)] <= gaps[(1.0, ic.id)]
    ok &= slow < 120
    criterion(3, ok, f"largest gap minus A/V {worst:.2e} (bound slack 1e-4), gap(3.2) vs gap(1) compared, slowest run {slow:.1f} s")


def test_criterion_4_relaxation(criterion):
    t0 = time.perf_counter()
    rep = validate_corpus(50, seed=0, delta=1e-3, max_iter=12)
    elapsed = time.perf_counter() - t0
    ok = rep.relaxed_feasible == rep.instances and rep.converged_share >= 0.9 and elapsed < 60
    criterion(4, ok, f"{rep.relaxed_feasible}/{rep.instances} exact points relaxed-feasible, "
                     f"{rep.converged}/{rep.instances} converged, {elapsed:.1f} s")


def random_market(rng):
    nb, ns = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    orders = [Order(i + 1, BUYER, ELECTRICITY, float(rng.uniform(0.1, 3.0)), float(rng.uniform(0.4, 1.0)))
              for i in range(nb)]
    orders += [Order(nb + j + 1, SELLER, ELECTRICITY, float(rng.uniform(0.1, 3.0)), float(rng.uniform(0.4, 1.0)))
               for j in range(ns)]
    return orders


def test_criterion_5_matching(week_runs, criterion):
    rng = np.random.default_rng(5)
    blocked = 0
    for k in range(200):
        orders = random_market(rng)
        res = match(orders, rng=np.random.default_rng(k))
        blocked += bool(blocking_pairs(orders, res)) or bool(stable(orders, res.matches))
    runs, _ = week_runs
    worst = 0.0
    slots = 0
    for traces in runs.values():
        for tr in traces.values():
            for chk in tr.checks:
                worst = max(worst, abs(chk["trade_cost_sum"] - chk["trade_revenue_sum"]))
                slots += 1
    criterion(5, blocked == 0 and worst <= 1e-9,
              f"{blocked}/200 markets with a blocking pair, money imbalance {worst:.1e} over {slots} slots")


def test_criterion_6_directions(week_runs, criterion):
    runs, elapsed = week_runs
    ok = elapsed < 600
    lines = []
    for seed, traces in runs.items():
        c = {k: tr.total_cost for k, tr in traces.items()}
        ok &= c["base"] < c["no_trading"]
        ok &= c["base"] < c["cctcc_off"]
        ok &= c["storage_1"] > c["storage_2"] > c["base"]
        ok &= c["greedy"] > c["base"]
        ok &= c["no_renewables"] > c["base"]
        lines.append(f"seed {seed}: " + ", ".join(f"{k} {v:.0f}" for k, v in c.items()))
    print("\n".join(lines))
    criterion(6, ok, f"strict cost orderings over seeds {list(SEEDS)}, {elapsed:.0f} s")


def test_criterion_7_carbon_conservation(week_runs, criterion):
    runs, _ = week_runs
    worst = 0.0
    slots = 0
    for traces in runs.values():
        for tr in traces.values():
            for chk in tr.checks:
                worst = max(worst, chk["emission_rel_mismatch"])
                slots += 1
    criterion(7, worst <= 1e-6, f"largest relative mismatch {worst:.2e} over {slots} slots")
