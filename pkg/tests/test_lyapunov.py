from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from ictrade.devices import TradeLimits, emit_balance_constraints, emit_device_constraints, register_slot_vars
from ictrade.lyapunov import (CapacityTooSmallError, SlotPrices, VirtualQueues, assemble_slot_objective,
                              drift_constant, lemma1_params, slot_cost, update_queues, v_max)
from ictrade.model import InvariantError
from ictrade.solver import ConicProgram, solve


def test_v_max_table_values(park24):
    ic = park24.ics[0]
    assert v_max(ic, 1.0, 0.4) == pytest.approx(3.2)
    assert v_max(ic, 1.0, 0.4) == pytest.approx(min(3.2 / 1.0, 0.85 * 3.2 / 0.4))


def test_v_zero_collapses_offsets(park24):
    ic = park24.ics[0]
    p = lemma1_params(ic, 1.0, 0.4, v_requested=0.0)
    assert (p.theta, p.eps, p.V) == (0.4, 0.4, 0.0)


def test_requested_v_clipped(park24):
    ic = park24.ics[0]
    assert lemma1_params(ic, 1.0, 0.4, v_requested=10.0).V == pytest.approx(3.2)
    assert lemma1_params(ic, 1.0, 0.4).V == pytest.approx(3.2)


def test_capacity_too_small(park24):
    ic = park24.ics[0]
    small = replace(ic, battery=replace(ic.battery, capacity_max=0.8, level0=0.4))
    with pytest.raises(CapacityTooSmallError):
        v_max(small, 1.0, 0.4)
    with pytest.raises(ValueError):
        v_max(ic, 0.0, 0.4)


def test_drift_constant(park24):
    assert drift_constant(park24.ics[0]) == pytest.approx(0.5 * (0.16 + 0.16))


def test_queue_updates(park24):
    ic = park24.ics[0]
    q = VirtualQueues(1.0, 2.0, theta=2.0, eps=1.0, V=1.0)
    assert update_queues(q, 0, 0, 0, 0, ic) == q
    nq = update_queues(q, 0.4, 0.0, 0.0, 0.0, ic)
    assert nq.battery == pytest.approx(1.4)
    assert nq.F - q.F == pytest.approx(0.4)
    assert nq.F == nq.battery - nq.theta and nq.Z == nq.tank - nq.eps


def test_queue_violation_raises(park24):
    ic = park24.ics[0]
    q = VirtualQueues(3.9, 2.0, 2.0, 1.0, 1.0)
    with pytest.raises(InvariantError, match="battery"):
        update_queues(q, 0.4, 0.0, 0.0, 0.0, ic)


def slot_program(ic, prices, q, carbon=0.0, e_load=1.0, h_load=0.5, pv=0.0):
    prog = ConicProgram()
    vs = register_slot_vars(prog, ic, pv, replace_carbon(), TradeLimits())
    emit_device_constraints(prog, ic, vs)
    emit_balance_constraints(prog, ic, vs, e_load, h_load)
    gamma = assemble_slot_objective(prog, vs, q, prices, carbon, 1000.0)
    return prog, vs, gamma


def replace_carbon():
    from ictrade.synth import synthetic_park
    return synthetic_park(horizon=1).carbon


PRICES = SlotPrices(p_e=600.0, p_o=250.0, p_g=400.0, p_capture=600.0, grid_intensity=0.85, gas_intensity=0.2,
                    capture_credit=0.7225)


def test_zero_queues_give_scaled_cost(park24):
    ic = park24.ics[0]
    q = VirtualQueues(2.0, 2.0, 2.0, 2.0, 1.0)
    prog, vs, gamma = slot_program(ic, PRICES, q, carbon=100.0)
    cost = slot_cost(vs, PRICES, 100.0) / 1000.0
    for k in set(gamma.terms) | set(cost.terms):
        assert gamma.terms.get(k, 0.0) == pytest.approx(cost.terms.get(k, 0.0), abs=1e-12)


def test_low_queue_never_discharges(park24):
    ic = park24.ics[0]
    # F + V p_e / ref < 0: buying to charge beats discharging
    q = VirtualQueues(0.5, 2.0, theta=3.0, eps=2.0, V=1.0)
    prog, vs, _ = slot_program(ic, PRICES, q)
    rep = solve(prog)
    assert rep.ok
    assert rep.value(vs.de) == pytest.approx(0.0, abs=1e-6)
    assert rep.value(vs.ce) == pytest.approx(ic.battery.charge_max, abs=1e-6)


def test_free_energy_and_positive_queue_never_charges(park24):
    ic = park24.ics[0]
    zero = SlotPrices(0, 0, 0, 0, 0.85, 0.2, 0.7225)
    q = VirtualQueues(3.0, 2.0, theta=1.0, eps=2.0, V=1.0)
    prog, vs, _ = slot_program(ic, zero, q)
    rep = solve(prog)
    assert rep.value(vs.ce) == pytest.approx(0.0, abs=1e-6)


def test_unregistered_variable(park24):
    ic = park24.ics[0]
    prog = ConicProgram()
    vs = register_slot_vars(prog, ic, 0.0, replace_carbon(), TradeLimits())
    with pytest.raises(KeyError):
        assemble_slot_objective(ConicProgram(), vs, VirtualQueues(0, 0, 0, 0, 1), PRICES, 0.0, 1000.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.05, 2.0), st.floats(0.0, 1.0))
def test_lemma_bounds_keep_storage_feasible(pe, pg, v_frac):
    # with the derived offsets, the box-free slot decision never pushes storage out of [0, 4]
    from ictrade.synth import synthetic_park
    ic = synthetic_park(horizon=1).ics[0]
    vmax = v_max(ic, pe, pg)
    par = lemma1_params(ic, pe, pg, v_frac * vmax)
    assert 0 <= par.V <= par.V_max
    assert par.theta + ic.battery.charge_max <= ic.battery.capacity_max + 1e-9
    assert par.eps + ic.tank.charge_max <= ic.tank.capacity_max + 1e-9
    assert par.theta >= ic.battery.discharge_max and par.eps >= ic.tank.discharge_max
