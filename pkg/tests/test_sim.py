import csv

import numpy as np
import pytest

from ictrade import sim
from ictrade.lyapunov import drift_constant
from ictrade.model import build_scenario
from ictrade.synth import single_ic_config, synthetic_park

from conftest import zero_series


@pytest.fixture(scope="module")
def base_trace(park24):
    return sim.run_simulation(park24, seed=0)


def test_idle_cluster_costs_nothing():
    cfg = single_ic_config()
    for dev in ("battery", "tank"):
        cfg["ics"][0][dev]["level0"] = 0.4  # equals the offset when nothing is priced, so both queues start at 0
    model = build_scenario(cfg, zero_series(24, [1]))
    tr = sim.run_simulation(model)
    assert tr.total_cost == pytest.approx(0.0, abs=1e-6)
    for r in tr.slots:
        assert r["battery"] == pytest.approx(0.4, abs=1e-6)
        assert r["tank"] == pytest.approx(0.4, abs=1e-6)
        assert abs(r["ce"]) + abs(r["de"]) + abs(r["ch"]) + abs(r["dh"]) < 1e-6


def test_rows_and_accounting(park24, base_trace):
    assert len(base_trace.slots) == 24 * 4
    for ic in park24.ics:
        assert len(base_trace.slot_rows(ic.id)) == 24
    for r in base_trace.slots:
        parts = sum(r[k] for k in sim.COST_FIELDS)
        assert parts == pytest.approx(r["cost_total"], abs=1e-6)
        assert sim.recompute_slot_cost(r) == pytest.approx(r["cost_total"], abs=1e-6)
    assert len(base_trace.days) == 4


def test_storage_inside_boxes(park24, base_trace):
    for r in base_trace.slots:
        ic = park24.ic(r["ic"])
        # recorded levels are the levels at the start of the slot
        assert -1e-7 <= r["battery"] <= ic.battery.capacity_max + 1e-7
        assert -1e-7 <= r["tank"] <= ic.tank.capacity_max + 1e-7
        assert r["F"] == pytest.approx(r["battery"] - base_trace.params[r["ic"]].theta)


def test_conservation_every_slot(base_trace):
    assert base_trace.checks
    for c in base_trace.checks:
        assert abs(c["trade_cost_sum"] - c["trade_revenue_sum"]) <= 1e-9
        assert c["emission_rel_mismatch"] <= 1e-6


def test_trading_happens_and_settles(base_trace):
    assert base_trace.matches
    for m in base_trace.matches:
        assert m["quantity"] > 0


def test_deterministic(park24, tmp_path):
    a = sim.run_simulation(park24, seed=3).write_csv(tmp_path / "a")
    b = sim.run_simulation(park24, seed=3).write_csv(tmp_path / "b")
    for name in ("slots.csv", "days.csv", "matches.csv", "checks.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_trading_lowers_cost(seed):
    m = synthetic_park(horizon=24, seed=seed)
    with_t = sim.run_simulation(m, seed=seed).total_cost
    without = sim.run_simulation(sim.with_trading(m, False, False), seed=seed).total_cost
    assert with_t <= without


def test_cctcc_off_prices_and_capture(park24):
    off = sim.with_cctcc(park24, False)
    tr = sim.run_simulation(off, horizon=6)
    factor = sim.tariff_factor(off)
    assert factor == pytest.approx(2.0)
    for r in tr.slots:
        assert r["capture"] == 0.0
        assert r["p_e"] == pytest.approx(park24.series.p_e[r["t"]] * factor)


def test_storage_sweep_nonincreasing(park24):
    res = sim.run_ablation(park24, {"storage_size": [1.0, 2.0, 4.0]})
    totals = [row["total_cost"] for row in res.table]
    assert totals[0] >= totals[1] >= totals[2]


def test_v_sweep_emits_traces(park24, tmp_path):
    res = sim.run_ablation(park24, {"V_sweep": [0.5, 1.0, 2.0, 3.2]}, horizon=4)
    assert len(res.traces) == 4
    Vs = [tr.params[1].V for tr in res.traces.values()]
    assert Vs == sorted(Vs)
    paths = sim.emit_plots(None, tmp_path, res)
    rows = list(csv.reader(paths[-1].open()))
    assert rows[0][0] == "V_sweep" and len(rows) == 5


def test_ablation_rows_per_combination(park24):
    res = sim.run_ablation(park24, {"cctcc": [True, False], "elec_trading": [True, False]}, horizon=2)
    assert len(res.table) == 4
    with pytest.raises(KeyError):
        sim.run_ablation(park24, {"moon_phase": [1]})


def test_emit_plots_empty(tmp_path):
    paths = sim.emit_plots(None, tmp_path)
    for p in paths:
        assert len(p.read_text().strip().splitlines()) == 1


def test_emit_plots_rows(base_trace, tmp_path):
    paths = sim.emit_plots(base_trace, tmp_path)
    for p in paths[:3]:
        rows = list(csv.reader(p.open()))
        assert rows[0] == ["t", "ic1", "ic2", "ic3", "ic4"]
        assert len(rows) == 25


def test_theorem_gap_small_instance(park2):
    m = sim.with_trading(sim.with_carbon_price_series(park2, 0.0), False, False)
    oracle = sim.run_simulation(m, "oracle")
    online = sim.run_simulation(m)
    for ic in m.ics:
        A, V = drift_constant(ic), online.params[ic.id].V
        gap = (online.ic_energy_cost(ic.id) - oracle.ic_energy_cost(ic.id)) / m.control.price_ref / 24
        assert gap <= A / V + 1e-4


def test_oracle_returns_storage(park2):
    tr = sim.run_simulation(sim.with_trading(park2, False, False), "oracle")
    for ic in park2.ics:
        rows = tr.slot_rows(ic.id)
        last = rows[-1]
        assert last["battery"] + last["ce"] - last["de"] == pytest.approx(ic.battery.level0, abs=1e-5)


def test_simultaneous_flag_recorded(base_trace):
    for r in base_trace.slots:
        assert r["simultaneous"] >= 0.0
        assert min(r["ce"], r["de"]) <= 1e-9 and min(r["ch"], r["dh"]) <= 1e-9


def test_net_storage():
    out, overlap = sim.net_storage({"ce": 0.3, "de": 0.1, "ch": 0.0, "dh": 0.2})
    assert out["ce"] == pytest.approx(0.2) and out["de"] == 0.0
    assert overlap == pytest.approx(0.1)


def test_infeasible_slot_reports_rows():
    cfg = single_ic_config()
    cols = zero_series(2, [1])
    cols["p_e"] = [0.5, 0.5]
    cols["p_g"] = [0.4, 0.4]
    cols["e_load_1"] = [500.0, 0.0]
    model = build_scenario(cfg, cols)
    with pytest.raises(sim.SlotInfeasibleError) as err:
        sim.run_simulation(model)
    rec = err.value.record()
    assert rec["slot"] == 0 and rec["ic"] == 1 and rec["rows"]


def test_horizon_beyond_series(park24):
    with pytest.raises(sim.SeriesExhaustedError):
        sim.run_simulation(park24, horizon=25)
    with pytest.raises(ValueError):
        sim.run_simulation(park24, policy="random")


def test_partial_day_prorates_quota(park24):
    tr = sim.run_simulation(park24, horizon=6)
    ic = park24.ics[0]
    assert tr.days[0]["quota"] == pytest.approx(ic.quota_daily * 6 / 24)


def test_batch_runner_stays_in_box(one_ic):
    rng = np.random.default_rng(0)
    k, T = 4, 200
    runs = {"p_e": rng.uniform(240, 1200, (k, T)), "p_o": np.full((k, T), 200.0), "p_g": np.full((k, T), 400.0),
            "e_load": rng.uniform(0.3, 2.0, (k, T)), "h_load": rng.uniform(0.3, 1.5, (k, T)),
            "pv": rng.uniform(0.0, 3.0, (k, T))}
    res = sim.run_single_ic_batch(one_ic, 1, runs, carbon_price=100.0)
    assert res.violations.sum() == 0 and res.unconverged == 0
    assert res.battery_min.min() >= -1e-7 and res.battery_max.max() <= 4 + 1e-7
