import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ictrade import relax_check as rc
from ictrade.gas_relax import (PipeBounds, PipeIterate, PipeRelaxState, TighteningDivergedError,
                               add_pressure_vars, build_relaxation, initial_bounds, shrink, tighten_bounds,
                               weymouth_residual)
from ictrade.model import GasNetwork, GasNode, Pipeline
from ictrade.solver import ConicProgram, solve

from oracles import weymouth_flow


def one_pipe(C=2.0, lo=0.0, hi=10.0):
    pipe = Pipeline("p", "n", "m", C)
    net = GasNetwork((GasNode("n", lo, hi), GasNode("m", lo, hi)), (pipe,), ("n",))
    return pipe, net


def relaxed(bounds, C=2.0, lo=0.0, hi=10.0):
    pipe, net = one_pipe(C, lo, hi)
    p = ConicProgram()
    pr = add_pressure_vars(p, net, ["n", "m"])
    f = p.var("f", 0.0)
    rv = build_relaxation(p, pipe, bounds, f, pr)
    return p, rv


def test_secant_bounds_F():
    b = PipeBounds(2.0, 4.0, 0.0, 10.0, 0.0, 20.0)
    lo = relaxed(b)
    p, rv = lo
    p.fix("f", 3.0)
    p.minimize(rv.F)
    assert solve(p).value(rv.F) == pytest.approx(9.0, abs=1e-5)
    p, rv = relaxed(b)
    p.fix("f", 3.0)
    p.minimize(-1.0 * rv.F)
    # secant (fmax + fmin) f - fmax fmin = 6 * 3 - 8
    assert solve(p).value(rv.F) == pytest.approx(10.0, abs=1e-5)


def test_equal_pressures_force_zero_flow():
    p, rv = relaxed(PipeBounds(0.0, 5.0, 0.0, 10.0, 0.0, 20.0))
    p.fix("pi[n]", 4.0)
    p.fix("pi[m]", 4.0)
    p.minimize(-1.0 * rv.f)
    rep = solve(p)
    assert rep.ok
    assert rep.value(rv.Pi) == pytest.approx(0.0, abs=1e-6)
    assert rep.value(rv.f) == pytest.approx(0.0, abs=1e-3)


def test_exact_point_inside_relaxation():
    assert weymouth_flow(2.0, 5.0, 3.0) == pytest.approx(8.0)
    pipe, net = one_pipe()
    b = initial_bounds(pipe, net)
    p, rv = relaxed(b)
    x = np.zeros(p.n)
    for name, v in {"pi[n]": 5.0, "pi[m]": 3.0, "f": 8.0, "pd[p]": 2.0, "ps[p]": 8.0, "Pi[p]": 16.0,
                    "F[p]": 64.0}.items():
        x[p.index[name]] = v
    assert p.violated(x, 1e-9) == []


def test_residual_examples():
    assert weymouth_residual(8.0, 5.0, 3.0, 2.0) == 0.0
    assert weymouth_residual(0.0, 4.0, 4.0, 1.0) == 0.0
    assert weymouth_residual(0.0, 5.0, 3.0, 2.0) == pytest.approx(16 / 25)
    with pytest.raises(ValueError):
        weymouth_residual(1.0, 0.0, 0.0, 1.0)


def test_bounds_validation():
    with pytest.raises(ValueError):
        PipeBounds(2.0, 1.0, 0, 1, 0, 1)
    with pytest.raises(ValueError):
        PipeBounds(0.0, 1.0, 0, 1, -1.0, 1)
    with pytest.raises(ValueError):
        PipeRelaxState({}, {}, sigma1=1.5)


def test_initial_bounds_follow_pressure_boxes():
    pipe, net = one_pipe(C=0.5, lo=1.0, hi=6.0)
    b = initial_bounds(pipe, net, f_cap=2.0)
    assert (b.d_min, b.d_max, b.s_min, b.s_max) == (0.0, 5.0, 2.0, 12.0)
    assert b.f_max == 2.0
    assert initial_bounds(pipe, net).f_max == pytest.approx(0.5 * math.sqrt(35.0))


def single_pipe_tree(C=1.2, demand=1.0):
    pipe = Pipeline("p1", "n0", "n1", C)
    net = GasNetwork((GasNode("n0", 5.0, 7.0), GasNode("n1", 5.0, 7.0)), (pipe,), ("n0",))
    return rc.TreeInstance(net, "n0", {"n0": 0.0, "n1": demand}, {"p1": demand}, {"n0": [pipe], "n1": []})


def test_single_pipeline_converges():
    inst = single_pipe_tree()
    exact = rc.exact_solution(inst)
    # exact oracle: bisection result sits on the Weymouth surface with the sink at its floor
    assert exact["n1"] == pytest.approx(5.0, abs=1e-9)
    assert weymouth_flow(1.2, exact["n0"], exact["n1"]) == pytest.approx(1.0, rel=1e-9)
    st_ = rc.tighten_instance(inst, delta=1e-3, max_iter=10)
    assert st_.converged and st_.iterations <= 10
    assert st_.final_residual <= 1e-3


def test_exact_start_stops_at_first_iteration():
    pipe, _ = one_pipe()
    state = PipeRelaxState({"p": pipe}, {"p": PipeBounds(8, 8, 2, 2, 8, 8)})
    out = tighten_bounds(state, lambda b: ({"p": PipeIterate(8.0, 2.0, 8.0)}, None))
    assert out.converged and out.iterations == 1


def test_bounds_stay_inside_shrunken_box():
    inst = rc.random_tree_instance(np.random.default_rng(5))
    st_ = rc.tighten_instance(inst, delta=1e-9, max_iter=6)
    hist = st_.history
    for prev, nxt in zip(hist, hist[1:]):
        for pid, it in prev.iterate.items():
            box = shrink(it, prev.sigma)
            w = nxt.widths[pid]
            assert w[0] <= box.f_max - box.f_min + 1e-12
            assert w[1] <= box.d_max - box.d_min + 1e-12
            assert w[2] <= box.s_max - box.s_min + 1e-12


def test_divergence_keeps_last_feasible_bounds():
    pipe, _ = one_pipe()
    start = {"p": PipeBounds(0, 10, 0, 10, 0, 20)}
    calls = []

    def cb(bounds):
        calls.append(dict(bounds))
        if len(calls) > 1:
            return None
        return {"p": PipeIterate(4.0, 1.0, 9.0)}, None

    with pytest.raises(TighteningDivergedError) as err:
        tighten_bounds(PipeRelaxState({"p": pipe}, start, delta=1e-9), cb)
    assert err.value.iteration == 2
    assert err.value.last_bounds == start
    assert len(err.value.history) == 1


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(2.0, 8.0), st.floats(0.0, 1.0))
def test_exact_points_are_relaxed_feasible(C, p_from, frac):
    # relaxation soundness on random single pipes with the exact flow from the Weymouth equation
    p_to = frac * p_from
    f = weymouth_flow(C, p_from, p_to)
    pipe, net = one_pipe(C, 0.0, 10.0)
    b = initial_bounds(pipe, net)
    p, rv = relaxed(b, C)
    x = np.zeros(p.n)
    vals = {"pi[n]": p_from, "pi[m]": p_to, "f": f, "pd[p]": p_from - p_to, "ps[p]": p_from + p_to,
            "Pi[p]": p_from ** 2 - p_to ** 2, "F[p]": f ** 2}
    for name, v in vals.items():
        x[p.index[name]] = v
    assert p.violated(x, 1e-7) == []


def grid_exact(inst, steps=4001):
    """Brute-force grid over the root pressure: lowest grid value whose propagated pressures stay in the box."""
    node = {n.id: n for n in inst.net.nodes}
    for root in np.linspace(node[inst.root].pressure_min, node[inst.root].pressure_max, steps):
        pr = {inst.root: root}
        ok = True
        stack = [inst.root]
        while stack and ok:
            n = stack.pop()
            for p in inst.children[n]:
                sq = pr[n] ** 2 - (inst.flows[p.id] / p.weymouth_c) ** 2
                if sq < node[p.to_node].pressure_min ** 2:
                    ok = False
                    break
                pr[p.to_node] = math.sqrt(sq)
                stack.append(p.to_node)
        if ok:
            return root
    return None


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_tree_exact_solution_sound(seed):
    inst = rc.random_tree_instance(np.random.default_rng(seed))
    exact = rc.exact_solution(inst)
    grid = grid_exact(inst)
    step = 2.0 / 4000
    assert exact[inst.root] <= grid + 1e-9 and grid - exact[inst.root] <= step + 1e-9
    assert rc.exact_is_relaxed_feasible(inst, exact) == []
    # the relaxed optimum can only be lower than the exact one
    rep = solve(rc.relaxed_program(inst).program)
    assert rep.ok and rep.objective <= exact[inst.root] + 1e-6


def test_monotone_flag_recorded():
    rep = rc.validate_corpus(10, seed=1)
    # monotonicity is reported per instance rather than asserted
    inst = rc.random_tree_instance(np.random.default_rng(1))
    st_ = rc.tighten_instance(inst)
    assert isinstance(st_.monotone, bool)
    assert rep.instances == 10 and len(rep.rows) == 10
