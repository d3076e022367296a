"""Random gas-tree corpus for checking the pipeline relaxation against exact Weymouth solutions.

Each instance is a six-node tree fed from its root with fixed nodal demands,
so pipeline flows are known. The exact problem (lowest root pressure that
keeps every node above its minimum) is solved by bisection on the root
pressure with the Weymouth equation applied pipe by pipe.

Node pressures default to a narrow transmission window (5 to 7). Tightening
shrinks boxes around relaxed iterates with no recovery rule, and with wide
windows the first iterate is often far enough off the Weymouth surface that
the shrunken relaxation is empty; ``validate_corpus`` reports those cases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gas_relax import (PipeBounds, PipeIterate, PipeRelaxState, TighteningDivergedError, add_pressure_vars,
                        build_relaxation, initial_bounds, tighten_bounds, weymouth_residual)
from .model import GasNetwork, GasNode, Pipeline
from .solver import ConicProgram, lsum, solve


@dataclass
class TreeInstance:
    net: GasNetwork
    root: str
    demand: dict[str, float]
    flows: dict[str, float]  # pipe id -> flow implied by the demands
    children: dict[str, list[Pipeline]] = field(default_factory=dict)


def random_tree_instance(rng: np.random.Generator, n_nodes: int = 6, p_min: float = 5.0,
                         p_max: float = 7.0) -> TreeInstance:
    """Random tree with ``n_nodes - 1`` pipelines whose exact solution fits in the pressure box."""
    while True:
        ids = [f"n{k}" for k in range(n_nodes)]
        parent = {ids[k]: ids[int(rng.integers(0, k))] for k in range(1, n_nodes)}
        demand = {n: (0.0 if n == ids[0] else float(rng.uniform(0.2, 1.5))) for n in ids}
        pipes = [Pipeline(id=f"p{k}", from_node=parent[ids[k]], to_node=ids[k],
                          weymouth_c=float(rng.uniform(0.6, 2.0))) for k in range(1, n_nodes)]
        nodes = tuple(GasNode(n, p_min, p_max) for n in ids)
        net = GasNetwork(nodes=nodes, pipelines=tuple(pipes), sources=(ids[0],))
        children: dict[str, list[Pipeline]] = {n: [] for n in ids}
        for p in pipes:
            children[p.from_node].append(p)
        flows = {}

        def subtree(n: str) -> float:
            tot = demand[n]
            for p in children[n]:
                f = subtree(p.to_node)
                flows[p.id] = f
                tot += f
            return tot

        subtree(ids[0])
        inst = TreeInstance(net, ids[0], demand, flows, children)
        sol = exact_solution(inst)
        if sol is not None:
            return inst


def _propagate(inst: TreeInstance, root_pressure: float) -> dict[str, float] | None:
    """Pressures downstream of the root; ``None`` if some node drops below zero."""
    out = {inst.root: root_pressure}
    stack = [inst.root]
    while stack:
        n = stack.pop()
        for p in inst.children[n]:
            sq = out[n] ** 2 - (inst.flows[p.id] / p.weymouth_c) ** 2
            if sq < 0:
                return None
            out[p.to_node] = math.sqrt(sq)
            stack.append(p.to_node)
    return out


def exact_solution(inst: TreeInstance, tol: float = 1e-12) -> dict[str, float] | None:
    """Lowest feasible root pressure by bisection; ``None`` if the box is too tight."""
    nodes = {n.id: n for n in inst.net.nodes}

    def ok(root: float) -> bool:
        pr = _propagate(inst, root)
        return pr is not None and all(pr[n] >= nodes[n].pressure_min for n in pr)

    lo, hi = nodes[inst.root].pressure_min, nodes[inst.root].pressure_max
    if not ok(hi):
        return None
    if ok(lo):
        return _propagate(inst, lo)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return _propagate(inst, hi)


@dataclass
class RelaxedTree:
    program: ConicProgram
    pressures: dict
    relax: dict


def outer_bounds(inst: TreeInstance) -> dict[str, PipeBounds]:
    """Starting boxes; tree flows are pinned by the nodal balances, so their box is a point."""
    out = {}
    for p in inst.net.pipelines:
        b = initial_bounds(p, inst.net)
        f = inst.flows[p.id]
        out[p.id] = PipeBounds(f, f, b.d_min, b.d_max, b.s_min, b.s_max)
    return out


def relaxed_program(inst: TreeInstance, bounds: dict[str, PipeBounds] | None = None) -> RelaxedTree:
    """Relaxed minimum-root-pressure problem with nodal gas balances."""
    prog = ConicProgram("gas_tree")
    pressures = add_pressure_vars(prog, inst.net, [n.id for n in inst.net.nodes])
    relax = {}
    flows = {}
    for p in inst.net.pipelines:
        b = (bounds or {}).get(p.id) or outer_bounds(inst)[p.id]
        f = prog.var(f"f[{p.id}]", 0.0)
        flows[p.id] = f
        relax[p.id] = build_relaxation(prog, p, b, f, pressures)
    for n in inst.net.nodes:
        if n.id == inst.root:
            continue
        inflow = lsum(flows[p.id] for p in inst.net.pipelines if p.to_node == n.id)
        outflow = lsum(flows[p.id] for p in inst.children[n.id])
        prog.add_eq(inflow - outflow, inst.demand[n.id], name=f"balance[{n.id}]")
    prog.minimize(pressures[inst.root])
    return RelaxedTree(prog, pressures, relax)


def exact_point_vector(inst: TreeInstance, pressures: dict[str, float]) -> tuple[ConicProgram, np.ndarray]:
    """Relaxed program at the initial bounds plus the exact solution written as a point of it."""
    rt = relaxed_program(inst)
    prog = rt.program
    x = np.zeros(prog.n)
    for nid, v in pressures.items():
        x[prog.index[f"pi[{nid}]"]] = v
    for p in inst.net.pipelines:
        f = inst.flows[p.id]
        pn, pm = pressures[p.from_node], pressures[p.to_node]
        x[prog.index[f"f[{p.id}]"]] = f
        x[prog.index[f"pd[{p.id}]"]] = pn - pm
        x[prog.index[f"ps[{p.id}]"]] = pn + pm
        x[prog.index[f"Pi[{p.id}]"]] = pn ** 2 - pm ** 2
        x[prog.index[f"F[{p.id}]"]] = f ** 2
    return prog, x


def exact_is_relaxed_feasible(inst: TreeInstance, pressures: dict[str, float], tol: float = 1e-7) -> list[str]:
    """Constraint rows of the relaxation violated by the exact point (empty means feasible)."""
    prog, x = exact_point_vector(inst, pressures)
    return prog.violated(x, tol)


def tighten_instance(inst: TreeInstance, sigma1: float = 0.25, sigma_decay: float = 0.5, delta: float = 1e-3,
                     max_iter: int = 12) -> PipeRelaxState:
    pipes = {p.id: p for p in inst.net.pipelines}
    outer = outer_bounds(inst)

    def attempt(bounds):
        rt = relaxed_program(inst, dict(bounds))
        rep = solve(rt.program, tol=1e-7)
        if not rep.ok:
            return None
        it = {pid: PipeIterate(rep.value(rv.f), rep.value(rv.d), rep.value(rv.s)) for pid, rv in rt.relax.items()}
        return it, rep

    state = PipeRelaxState(pipes=pipes, bounds=outer, sigma1=sigma1, sigma_decay=sigma_decay, delta=delta,
                           max_iter=max_iter)
    return tighten_bounds(state, attempt)


@dataclass
class CorpusReport:
    instances: int
    relaxed_feasible: int
    converged: int
    rows: list[dict]

    @property
    def converged_share(self) -> float:
        return self.converged / max(self.instances, 1)


def validate_corpus(n_instances: int = 50, seed: int = 0, delta: float = 1e-3, max_iter: int = 12) -> CorpusReport:
    rng = np.random.default_rng(seed)
    rows = []
    feasible = converged = 0
    for k in range(n_instances):
        inst = random_tree_instance(rng)
        exact = exact_solution(inst)
        bad = exact_is_relaxed_feasible(inst, exact)
        feasible += not bad
        try:
            st = tighten_instance(inst, delta=delta, max_iter=max_iter)
            iters, res, conv, note = st.iterations, st.final_residual, st.converged, ""
            root_pipe = next(p for p in inst.net.pipelines if p.from_node == inst.root)
            root_p = st.history[-1].iterate[root_pipe.id].p_from
        except TighteningDivergedError as exc:
            iters, conv, note, root_p = exc.iteration, False, "relaxation infeasible", math.nan
            res = exc.history[-1].max_residual if exc.history else math.nan
        converged += conv
        exact_res = max(weymouth_residual(inst.flows[p.id], exact[p.from_node], exact[p.to_node], p.weymouth_c)
                        for p in inst.net.pipelines)
        rows.append({"instance": k, "exact_root_pressure": exact[inst.root], "exact_residual": exact_res,
                     "relaxed_feasible": int(not bad), "violated": ";".join(bad), "iterations": iters,
                     "final_residual": res, "relaxed_root_pressure": root_p, "converged": int(conv), "note": note})
    return CorpusReport(n_instances, feasible, converged, rows)
