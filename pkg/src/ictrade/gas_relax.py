"""Convex relaxation of the Weymouth pipeline equation and iterative bound tightening.

The exact relation for a pipeline n -> m is ``f^2 = C^2 (pi_n^2 - pi_m^2)``.
It is replaced by

* ``f^2 <= C^2 * Pi`` and ``F >= f^2`` (rotated second-order cones),
* ``F / C^2 >= Pi``,
* the secant over-estimator ``F <= (fmax + fmin) f - fmax fmin``,
* four McCormick planes bounding ``Pi`` against ``d * s`` where
  ``d = pi_n - pi_m`` and ``s = pi_n + pi_m``.

Bound tightening shrinks the boxes of ``f``, ``d`` and ``s`` around each
relaxed iterate until the Weymouth residual drops below a threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from .model import GasNetwork, Pipeline
from .solver import Affine, ConicProgram


class TighteningDivergedError(RuntimeError):
    """The relaxed problem became infeasible inside the tightening loop."""

    def __init__(self, iteration: int, last_bounds: dict[str, "PipeBounds"], history: list["TighteningStep"]):
        super().__init__(f"relaxed problem infeasible at tightening iteration {iteration}")
        self.iteration = iteration
        self.last_bounds = last_bounds
        self.history = history


@dataclass(frozen=True)
class PipeBounds:
    f_min: float
    f_max: float
    d_min: float
    d_max: float
    s_min: float
    s_max: float

    def __post_init__(self):
        if self.f_min > self.f_max or self.d_min > self.d_max or self.s_min > self.s_max:
            raise ValueError(f"inverted bounds {self}")
        if self.s_min < 0:
            raise ValueError("pressure-sum lower bound must be >= 0")

    @property
    def degenerate(self) -> bool:
        return self.f_min == self.f_max

    def widths(self) -> tuple[float, float, float]:
        return (self.f_max - self.f_min, self.d_max - self.d_min, self.s_max - self.s_min)

    def intersect(self, other: "PipeBounds") -> "PipeBounds":
        def cap(lo1, hi1, lo2, hi2):
            lo, hi = max(lo1, lo2), min(hi1, hi2)
            return (lo, hi) if lo <= hi else (lo1, hi1)

        f = cap(self.f_min, self.f_max, other.f_min, other.f_max)
        d = cap(self.d_min, self.d_max, other.d_min, other.d_max)
        s = cap(self.s_min, self.s_max, other.s_min, other.s_max)
        return PipeBounds(f[0], f[1], d[0], d[1], s[0], s[1])


def initial_bounds(pipe: Pipeline, net: GasNetwork, f_cap: float = math.inf) -> PipeBounds:
    """Boxes implied by nodal pressure limits, compressor ratios and a flow cap."""
    n = net.node(pipe.from_node)
    m = net.node(pipe.to_node)
    pn_lo, pn_hi = n.pressure_min, n.pressure_max
    pm_lo, pm_hi = m.pressure_min, m.pressure_max
    # ratio limits narrow each end given the other end's box
    pn_lo = max(pn_lo, pipe.ratio_min * pm_lo)
    if math.isfinite(pipe.ratio_max):
        pn_hi = min(pn_hi, pipe.ratio_max * pm_hi)
        pm_lo = max(pm_lo, pn_lo / pipe.ratio_max)
    pm_hi = min(pm_hi, pn_hi / pipe.ratio_min)
    d_min = max(0.0, pn_lo - pm_hi)
    d_max = max(d_min, pn_hi - pm_lo)
    s_min = pn_lo + pm_lo
    s_max = pn_hi + pm_hi
    f_phys = pipe.weymouth_c * math.sqrt(max(pn_hi ** 2 - pm_lo ** 2, 0.0))
    return PipeBounds(0.0, min(f_cap, f_phys), d_min, d_max, s_min, s_max)


@dataclass
class RelaxVars:
    """Handles created by :func:`build_relaxation` for one pipeline."""

    pipe_id: str
    f: Affine
    F: Affine
    Pi: Affine
    d: Affine
    s: Affine
    p_from: Affine
    p_to: Affine


def add_pressure_vars(program: ConicProgram, net: GasNetwork, node_ids, prefix: str = "pi") -> dict[str, Affine]:
    out = {}
    for nid in node_ids:
        node = net.node(nid)
        out[nid] = program.var(f"{prefix}[{nid}]", node.pressure_min, node.pressure_max)
    return out


def build_relaxation(program: ConicProgram, pipe: Pipeline, bounds: PipeBounds, f: Affine,
                     pressures: Mapping[str, Affine], tag: str = "") -> RelaxVars:
    """Emit the relaxed Weymouth constraint set for ``pipe`` into ``program``.

    ``f`` is an existing flow expression; its box is imposed here as rows.
    """
    C2 = pipe.weymouth_c ** 2
    tag = tag or pipe.id
    b = bounds
    pn = pressures[pipe.from_node]
    pm = pressures[pipe.to_node]
    d = program.var(f"pd[{tag}]", b.d_min, b.d_max)
    s = program.var(f"ps[{tag}]", b.s_min, b.s_max)
    Pi = program.var(f"Pi[{tag}]")
    program.add_eq(d, pn - pm, name=f"pdiff[{tag}]")
    program.add_eq(s, pn + pm, name=f"psum[{tag}]")
    if pipe.ratio_min > 0:
        program.add_ge(pn, pm * pipe.ratio_min, name=f"ratio_lo[{tag}]")
    if math.isfinite(pipe.ratio_max):
        program.add_le(pn, pm * pipe.ratio_max, name=f"ratio_hi[{tag}]")

    if b.degenerate:
        F = program.var(f"F[{tag}]", b.f_min ** 2, b.f_min ** 2)
        program.add_eq(f, b.f_min, name=f"fflow_fixed[{tag}]")
    else:
        F = program.var(f"F[{tag}]", 0.0)
        program.add_ge(f, b.f_min, name=f"fmin[{tag}]")
        program.add_le(f, b.f_max, name=f"fmax[{tag}]")
        # secant over-estimator of f^2
        program.add_le(F, (b.f_max + b.f_min) * f - b.f_max * b.f_min, name=f"secant[{tag}]")
        # F >= f^2  <=>  ||(2f, F - 1)|| <= F + 1
        program.add_soc(F + 1.0, [2.0 * f, F - 1.0], name=f"Fsq[{tag}]")
    # F / C^2 >= Pi
    program.add_le(Pi * C2, F, name=f"FPi[{tag}]")
    # f^2 <= C^2 Pi  <=>  ||(2f, C^2 Pi - 1)|| <= C^2 Pi + 1
    program.add_soc(Pi * C2 + 1.0, [2.0 * f, Pi * C2 - 1.0], name=f"fPi[{tag}]")
    # McCormick envelope of d * s
    program.add_ge(Pi, b.d_min * (s - b.s_min) + b.s_min * d, name=f"mc_lo1[{tag}]")
    program.add_ge(Pi, b.d_max * (s - b.s_max) + b.s_max * d, name=f"mc_lo2[{tag}]")
    program.add_le(Pi, b.d_min * (s - b.s_max) + b.s_max * d, name=f"mc_hi1[{tag}]")
    program.add_le(Pi, b.d_max * (s - b.s_min) + b.s_min * d, name=f"mc_hi2[{tag}]")
    return RelaxVars(pipe.id, f, F, Pi, d, s, pn, pm)


def weymouth_residual(f: float, p_from: float, p_to: float, C: float) -> float:
    """Relative Weymouth mismatch ``|pi_n^2 - pi_m^2 - f^2/C^2| / pi_n^2``."""
    if p_from <= 0:
        raise ValueError("upstream pressure must be positive")
    return abs(p_from ** 2 - p_to ** 2 - f ** 2 / C ** 2) / p_from ** 2


@dataclass
class PipeIterate:
    f: float
    d: float
    s: float

    @property
    def p_from(self) -> float:
        return 0.5 * (self.s + self.d)

    @property
    def p_to(self) -> float:
        return 0.5 * (self.s - self.d)


@dataclass
class TighteningStep:
    iteration: int
    sigma: float
    max_residual: float
    residuals: dict[str, float]
    widths: dict[str, tuple[float, float, float]]
    iterate: dict[str, PipeIterate]


@dataclass
class PipeRelaxState:
    pipes: dict[str, Pipeline]
    bounds: dict[str, PipeBounds]
    sigma1: float = 0.25
    sigma_decay: float = 0.5
    delta: float = 1e-3
    max_iter: int = 12
    history: list[TighteningStep] = field(default_factory=list)
    converged: bool = False
    solution: object = None

    def __post_init__(self):
        if not 0 < self.sigma1 < 1 or not 0 < self.sigma_decay < 1:
            raise ValueError("shrink schedule must lie in (0, 1)")

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def final_residual(self) -> float:
        return self.history[-1].max_residual if self.history else math.inf

    @property
    def monotone(self) -> bool:
        r = [h.max_residual for h in self.history]
        return all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(r, r[1:]))


# callback: bounds -> (per-pipe iterate, opaque solution) or None when infeasible
SolveCallback = Callable[[Mapping[str, PipeBounds]], "tuple[dict[str, PipeIterate], object] | None"]


def shrink(iterate: PipeIterate, sigma: float) -> PipeBounds:
    lo, hi = 1.0 - sigma, 1.0 + sigma
    return PipeBounds(lo * iterate.f, hi * iterate.f, lo * iterate.d, hi * iterate.d,
                      lo * iterate.s, hi * iterate.s)


def tighten_bounds(state: PipeRelaxState, solve: SolveCallback) -> PipeRelaxState:
    """Iterate relax / measure / shrink until every pipeline meets ``delta``.

    The returned state carries the full iteration history. Bounds at iteration
    ``o + 1`` are the ``(1 +/- sigma_o)`` box around iterate ``o`` intersected with
    the starting boxes. Infeasibility raises :class:`TighteningDivergedError`
    with the last bounds that produced a feasible relaxation.
    """
    st = replace(state, history=[], converged=False, solution=None, bounds=dict(state.bounds))
    outer = dict(state.bounds)
    sigma = st.sigma1
    last_feasible = dict(st.bounds)
    for o in range(1, st.max_iter + 1):
        out = solve(st.bounds)
        if out is None:
            raise TighteningDivergedError(o, last_feasible, st.history)
        iterate, solution = out
        last_feasible = dict(st.bounds)
        st.solution = solution
        res = {}
        for pid, it in iterate.items():
            pipe = st.pipes[pid]
            p_from = it.p_from
            res[pid] = weymouth_residual(it.f, p_from, it.p_to, pipe.weymouth_c) if p_from > 0 else 0.0
        worst = max(res.values(), default=0.0)
        st.history.append(TighteningStep(
            iteration=o, sigma=sigma, max_residual=worst, residuals=res,
            widths={pid: b.widths() for pid, b in st.bounds.items()}, iterate=dict(iterate),
        ))
        if worst <= st.delta:
            st.converged = True
            return st
        if o == st.max_iter:
            break
        st.bounds = {pid: shrink(iterate[pid], sigma).intersect(outer[pid]) for pid in st.bounds}
        sigma *= st.sigma_decay
    return st
