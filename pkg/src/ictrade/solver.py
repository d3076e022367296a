"""A small conic program container with a Clarabel backend.

Programs are built from :class:`Affine` expressions over registered variables.
Supported pieces: variable boxes, a linear objective, weighted squares of
affine expressions, linear equalities and inequalities, and second-order cones
``||y|| <= t``. :func:`solve` re-checks every optimal answer by substitution.

:func:`solve_lp_batch` is a separate dense interior-point routine for many LPs
sharing one constraint matrix; the long simulation runs use it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"
UNBOUNDED = "unbounded"


class Affine:
    """Sparse affine expression ``sum(coef * x[idx]) + const``."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Mapping[int, float] | None = None, const: float = 0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def lift(x: "Affine | float | int") -> "Affine":
        return x if isinstance(x, Affine) else Affine(const=float(x))

    def __add__(self, other):
        o = Affine.lift(other)
        terms = dict(self.terms)
        for k, v in o.terms.items():
            terms[k] = terms.get(k, 0.0) + v
        return Affine(terms, self.const + o.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-Affine.lift(other))

    def __rsub__(self, other):
        return Affine.lift(other) - self

    def __mul__(self, s: float):
        if isinstance(s, Affine):
            raise TypeError("only scalar multiples of affine expressions are allowed")
        s = float(s)
        return Affine({k: v * s for k, v in self.terms.items()}, self.const * s)

    __rmul__ = __mul__

    def __truediv__(self, s: float):
        return self * (1.0 / float(s))

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(v * x[k] for k, v in self.terms.items())

    def __repr__(self) -> str:
        parts = [f"{v:+g}*x{k}" for k, v in sorted(self.terms.items())]
        return " ".join(parts + [f"{self.const:+g}"])


def lsum(items: Iterable) -> Affine:
    out = Affine()
    for it in items:
        out = out + it
    return out


@dataclass
class Row:
    expr: Affine  # expr == 0 (equality) or expr <= 0 (inequality)
    name: str


@dataclass
class Cone:
    t: Affine
    ys: list[Affine]
    name: str


class ConicProgram:
    """Variable registry plus objective and constraint rows."""

    def __init__(self, name: str = "program"):
        self.name = name
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.objective = Affine()
        self.squares: list[tuple[float, Affine]] = []
        self.eqs: list[Row] = []
        self.les: list[Row] = []
        self.cones: list[Cone] = []

    @property
    def n(self) -> int:
        return len(self.names)

    def var(self, name: str, lb: float = -math.inf, ub: float = math.inf) -> Affine:
        if name in self.index:
            raise ValueError(f"variable {name!r} registered twice")
        if lb > ub:
            raise ValueError(f"variable {name!r}: lower bound {lb} above upper bound {ub}")
        k = len(self.names)
        self.names.append(name)
        self.index[name] = k
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        return Affine({k: 1.0})

    def __getitem__(self, name: str) -> Affine:
        if name not in self.index:
            raise KeyError(f"variable {name!r} is not registered")
        return Affine({self.index[name]: 1.0})

    def set_bounds(self, name: str, lb: float | None = None, ub: float | None = None) -> None:
        k = self.index[name]
        if lb is not None:
            self.lb[k] = float(lb)
        if ub is not None:
            self.ub[k] = float(ub)
        if self.lb[k] > self.ub[k]:
            raise ValueError(f"variable {name!r}: empty box [{self.lb[k]}, {self.ub[k]}]")

    def fix(self, name: str, value: float) -> None:
        self.set_bounds(name, -math.inf, math.inf)
        self.set_bounds(name, value, value)

    def _check(self, e: Affine) -> Affine:
        e = Affine.lift(e)
        for k in e.terms:
            if not 0 <= k < self.n:
                raise ValueError(f"expression references unregistered variable index {k}")
        return e

    def minimize(self, expr: Affine | float) -> None:
        self.objective = self.objective + self._check(expr)

    def add_square(self, expr: Affine, weight: float = 1.0) -> None:
        if weight < 0:
            raise ValueError("square weights must be nonnegative")
        self.squares.append((float(weight), self._check(expr)))

    def add_eq(self, lhs, rhs=0.0, name: str = "") -> None:
        self.eqs.append(Row(self._check(Affine.lift(lhs) - rhs), name or f"eq{len(self.eqs)}"))

    def add_le(self, lhs, rhs=0.0, name: str = "") -> None:
        self.les.append(Row(self._check(Affine.lift(lhs) - rhs), name or f"le{len(self.les)}"))

    def add_ge(self, lhs, rhs=0.0, name: str = "") -> None:
        self.add_le(rhs, lhs, name)

    def add_soc(self, t, ys: Iterable, name: str = "") -> None:
        """Constrain ``||ys|| <= t``."""
        self.cones.append(Cone(self._check(t), [self._check(y) for y in ys], name or f"soc{len(self.cones)}"))

    # -- evaluation ---------------------------------------------------------

    def objective_value(self, x: np.ndarray) -> float:
        val = self.objective.value(x)
        for w, e in self.squares:
            val += w * e.value(x) ** 2
        return val

    def residuals(self, x: np.ndarray) -> dict[str, float]:
        """Worst relative violation per constraint family, computed by substitution."""

        def scale(e: Affine) -> float:
            mags = [abs(e.const)] + [abs(v * x[k]) for k, v in e.terms.items()]
            return max(1.0, max(mags))

        out = {"bounds": 0.0, "eq": 0.0, "le": 0.0, "soc": 0.0}
        for k in range(self.n):
            s = max(1.0, abs(x[k]))
            out["bounds"] = max(out["bounds"], (self.lb[k] - x[k]) / s, (x[k] - self.ub[k]) / s)
        for r in self.eqs:
            out["eq"] = max(out["eq"], abs(r.expr.value(x)) / scale(r.expr))
        for r in self.les:
            out["le"] = max(out["le"], r.expr.value(x) / scale(r.expr))
        for c in self.cones:
            t = c.t.value(x)
            norm = math.sqrt(sum(y.value(x) ** 2 for y in c.ys))
            out["soc"] = max(out["soc"], (norm - t) / max(1.0, abs(t), norm))
        return {k: max(v, 0.0) for k, v in out.items()}

    def violated(self, x: np.ndarray, tol: float) -> list[str]:
        """Names of constraints violated by more than ``tol`` (relative)."""
        bad = []
        for k in range(self.n):
            s = max(1.0, abs(x[k]))
            if (self.lb[k] - x[k]) / s > tol or (x[k] - self.ub[k]) / s > tol:
                bad.append(f"bounds:{self.names[k]}")
        for r in self.eqs:
            if abs(r.expr.value(x)) > tol * max(1.0, abs(r.expr.const)):
                bad.append(r.name)
        for r in self.les:
            if r.expr.value(x) > tol * max(1.0, abs(r.expr.const)):
                bad.append(r.name)
        for c in self.cones:
            if math.sqrt(sum(y.value(x) ** 2 for y in c.ys)) - c.t.value(x) > tol:
                bad.append(c.name)
        return bad

    # -- export -------------------------------------------------------------

    def dump(self, path: str | Path) -> None:
        """Write a plain-text listing of the program for debugging."""

        def fmt(e: Affine) -> str:
            parts = [f"{v:+.17g} {self.names[k]}" for k, v in sorted(e.terms.items())]
            if e.const or not parts:
                parts.append(f"{e.const:+.17g}")
            return " ".join(parts)

        lines = [f"# program {self.name}", "minimize", "  " + fmt(self.objective)]
        for w, e in self.squares:
            lines.append(f"  + {w:.17g} * ( {fmt(e)} )^2")
        lines.append("subject to")
        for r in self.eqs:
            lines.append(f"  {r.name}: {fmt(r.expr)} == 0")
        for r in self.les:
            lines.append(f"  {r.name}: {fmt(r.expr)} <= 0")
        for c in self.cones:
            lines.append(f"  {c.name}: || " + " ; ".join(fmt(y) for y in c.ys) + f" || <= {fmt(c.t)}")
        lines.append("bounds")
        for k, nm in enumerate(self.names):
            lines.append(f"  {self.lb[k]:.17g} <= {nm} <= {self.ub[k]:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")

    def standard_form(self):
        """Dense LP data ``(c, A_eq, b_eq, A_le, b_le, lb, ub, const)``.

        Only valid for programs without squares or cones.
        """
        if self.squares or self.cones:
            raise ValueError("standard_form is limited to linear programs")
        n = self.n
        c = np.zeros(n)
        for k, v in self.objective.terms.items():
            c[k] += v

        def rows(rs: list[Row]):
            A = np.zeros((len(rs), n))
            b = np.zeros(len(rs))
            for i, r in enumerate(rs):
                for k, v in r.expr.terms.items():
                    A[i, k] += v
                b[i] = -r.expr.const
            return A, b

        A_eq, b_eq = rows(self.eqs)
        A_le, b_le = rows(self.les)
        return (c, A_eq, b_eq, A_le, b_le, np.array(self.lb), np.array(self.ub), self.objective.const)


@dataclass
class SolveReport:
    status: str
    x: np.ndarray | None
    objective: float
    residuals: dict[str, float] = field(default_factory=dict)
    iterations: int = 0
    program: ConicProgram | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def __getitem__(self, name: str) -> float:
        assert self.x is not None and self.program is not None
        return float(self.x[self.program.index[name]])

    def value(self, e: Affine) -> float:
        assert self.x is not None
        return e.value(self.x)


def _clarabel_data(p: ConicProgram):
    """Translate to Clarabel's ``min 1/2 x'Px + q'x  s.t.  Ax + s = b, s in K`` form."""
    import clarabel

    n = p.n
    rows: list[dict[int, float]] = []
    rhs: list[float] = []
    cones = []

    def push(e: Affine, sign: float = 1.0):
        # Row encodes s = b - A x with s = sign * e(x)
        rows.append({k: -sign * v for k, v in e.terms.items()})
        rhs.append(sign * e.const)

    zero_rows = 0
    for r in p.eqs:
        push(r.expr)
        zero_rows += 1
    for k in range(n):
        if p.lb[k] == p.ub[k]:
            push(Affine({k: 1.0}, -p.lb[k]))
            zero_rows += 1
    if zero_rows:
        cones.append(clarabel.ZeroConeT(zero_rows))
    nonneg = 0
    for r in p.les:
        push(r.expr, -1.0)
        nonneg += 1
    for k in range(n):
        if p.lb[k] == p.ub[k]:
            continue
        if math.isfinite(p.lb[k]):
            push(Affine({k: 1.0}, -p.lb[k]))
            nonneg += 1
        if math.isfinite(p.ub[k]):
            push(Affine({k: 1.0}, -p.ub[k]), -1.0)
            nonneg += 1
    if nonneg:
        cones.append(clarabel.NonnegativeConeT(nonneg))
    for c in p.cones:
        push(c.t)
        for y in c.ys:
            push(y)
        cones.append(clarabel.SecondOrderConeT(1 + len(c.ys)))

    data, ri, ci = [], [], []
    for i, r in enumerate(rows):
        for k, v in r.items():
            if v != 0.0:
                ri.append(i)
                ci.append(k)
                data.append(v)
    A = sp.csc_matrix((data, (ri, ci)), shape=(len(rows), n))
    b = np.array(rhs, dtype=float)

    q = np.zeros(n)
    for k, v in p.objective.terms.items():
        q[k] += v
    P = sp.csc_matrix((n, n))
    const = p.objective.const
    if p.squares:
        pd, pr, pc = [], [], []
        for w, e in p.squares:
            items = list(e.terms.items())
            for k, a in items:
                q[k] += 2.0 * w * e.const * a
                for m, bcoef in items:
                    if m >= k:
                        pr.append(k)
                        pc.append(m)
                        pd.append(2.0 * w * a * bcoef)
            const += w * e.const ** 2
        P = sp.csc_matrix((pd, (pr, pc)), shape=(n, n))
    return P, q, A, b, cones, const


def solve(p: ConicProgram, tol: float = 1e-8, max_iter: int = 200, verbose: bool = False) -> SolveReport:
    """Solve ``p`` and verify the answer by substitution.

    Infeasibility is reported through ``status`` rather than raised.
    """
    import clarabel

    if p.n == 0:
        return SolveReport(OPTIMAL, np.zeros(0), p.objective.const, {}, 0, p)
    for k in range(p.n):
        if p.lb[k] > p.ub[k]:
            return SolveReport(INFEASIBLE, None, math.nan, {}, 0, p)
    P, q, A, b, cones, const = _clarabel_data(p)
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_feas = min(1e-9, tol * 0.1)
    settings.tol_gap_abs = min(1e-9, tol * 0.1)
    settings.tol_gap_rel = min(1e-9, tol * 0.1)
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    x = np.array(sol.x, dtype=float)
    iters = int(sol.iterations)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SolveReport(INFEASIBLE, None, math.nan, {}, iters, p)
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        return SolveReport(UNBOUNDED, None, -math.inf, {}, iters, p)
    # clip tiny bound excursions left by the interior-point iterate
    lb = np.array(p.lb)
    ub = np.array(p.ub)
    x = np.minimum(np.maximum(x, lb), ub)
    res = p.residuals(x)
    obj = p.objective_value(x)
    if status in ("Solved", "AlmostSolved") and max(res.values(), default=0.0) <= tol:
        return SolveReport(OPTIMAL, x, obj, res, iters, p)
    return SolveReport(ITERATION_LIMIT, x, obj, res, iters, p)


def diagnose_infeasible(p: ConicProgram, tol: float = 1e-6) -> list[str]:
    """Names of rows that must be violated for ``p`` to become feasible.

    Builds an elastic copy in which every linear row gains nonnegative slack
    and minimizes total slack; rows left with slack above ``tol`` are reported.
    """
    q = ConicProgram(p.name + ".elastic")
    for k, nm in enumerate(p.names):
        q.var(nm, p.lb[k], p.ub[k])
    slacks: list[tuple[str, Affine]] = []
    for r in p.eqs:
        up = q.var(f"slack+[{r.name}]", 0.0)
        dn = q.var(f"slack-[{r.name}]", 0.0)
        q.add_eq(r.expr + up - dn, 0.0, name=r.name)
        slacks.append((r.name, up + dn))
    for r in p.les:
        dn = q.var(f"slack-[{r.name}]", 0.0)
        q.add_le(r.expr - dn, 0.0, name=r.name)
        slacks.append((r.name, dn))
    for c in p.cones:
        q.add_soc(c.t, c.ys, name=c.name)
    q.minimize(lsum(e for _, e in slacks))
    rep = solve(q, tol=1e-6)
    if rep.x is None:
        return ["<bounds or cones alone are infeasible>"]
    return [name for name, e in slacks if e.value(rep.x) > tol]


# ---------------------------------------------------------------------------
# Batched dense LP interior point
# ---------------------------------------------------------------------------


REG = 1e-12


@dataclass
class BatchLpResult:
    x: np.ndarray  # (k, n)
    objective: np.ndarray  # (k,)
    converged: np.ndarray  # (k,) bool
    iterations: int
    fallbacks: int = 0  # members re-solved by the exact fallback


def _solve_stack(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Batched ``M x = rhs``; singular members fall back to least squares one by one."""
    try:
        return np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(rhs)
        for i in range(M.shape[0]):
            try:
                out[i] = np.linalg.solve(M[i], rhs[i])
            except np.linalg.LinAlgError:
                out[i] = np.linalg.lstsq(M[i], rhs[i], rcond=None)[0]
        return out


def solve_lp_batch(c: np.ndarray, A: np.ndarray, b: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                   tol: float = 1e-9, max_iter: int = 60) -> BatchLpResult:
    """Mehrotra predictor-corrector for ``k`` LPs ``min c'x, A x = b, lb <= x <= ub``.

    ``A`` (m, n) is shared; ``c``, ``b``, ``lb``, ``ub`` may carry a leading batch axis.
    Lower bounds must be finite. Variables with ``lb == ub`` should be removed by
    the caller (see :class:`LpTemplate`). Converged instances drop out of the
    iteration.
    """
    c = np.atleast_2d(np.asarray(c, dtype=float))
    k, n = c.shape
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    b = np.broadcast_to(np.asarray(b, dtype=float), (k, m)).copy()
    lb = np.broadcast_to(np.asarray(lb, dtype=float), (k, n)).copy()
    ub = np.broadcast_to(np.asarray(ub, dtype=float), (k, n)).copy()
    if not np.all(np.isfinite(lb)):
        raise ValueError("solve_lp_batch requires finite lower bounds")
    # shift to x' = x - lb >= 0
    b = b - lb @ A.T
    u = ub - lb
    if np.any(u <= 0):
        raise ValueError("solve_lp_batch: eliminate fixed or empty-box variables first")
    has_u = np.isfinite(u)
    u_f = np.where(has_u, u, 1.0)

    x = np.where(has_u, np.minimum(1.0, 0.5 * u_f), 1.0)
    s = np.where(has_u, u_f - x, 1.0)
    z = np.ones((k, n))
    v = np.where(has_u, 1.0, 0.0)
    y = np.zeros((k, m))
    n_compl = n + has_u.sum(axis=1)
    scale_b = 1.0 + np.abs(b).max(axis=1)
    scale_c = 1.0 + np.abs(c).max(axis=1)
    converged = np.zeros(k, dtype=bool)
    eye = np.eye(m)
    it = 0

    def step(w, dw, mask=None):
        ratio = np.where(dw < 0, -w / np.where(dw < 0, dw, -1.0), np.inf)
        if mask is not None:
            ratio = np.where(mask, ratio, np.inf)
        return np.minimum(1.0, ratio.min(axis=1))

    while it < max_iter:
        rp = b - x @ A.T
        ru = np.where(has_u, u_f - x - s, 0.0)
        rd = c - y @ A - z + v
        gap = (x * z).sum(axis=1) + np.where(has_u, s * v, 0.0).sum(axis=1)
        pobj = (c * x).sum(axis=1)
        converged |= (
            (np.abs(rp).max(axis=1, initial=0.0) <= tol * scale_b)
            & (np.abs(ru).max(axis=1) <= tol * scale_b)
            & (np.abs(rd).max(axis=1) <= tol * scale_c)
            & (gap <= tol * (1.0 + np.abs(pobj)))
        )
        act = np.flatnonzero(~converged)
        if act.size == 0:
            break
        it += 1
        xa, sa, za, va, hu = x[act], s[act], z[act], v[act], has_u[act]
        rpa, rua, rda = rp[act], ru[act], rd[act]
        theta = 1.0 / (za / xa + np.where(hu, va / sa, 0.0))
        M = (A[None, :, :] * theta[:, None, :]) @ A.T
        # small shift keeps the normal equations solvable when a row loses all its free columns
        M += REG * eye

        def newton(rxz, rsv):
            rhat = rda - rxz / xa + np.where(hu, (rsv - va * rua) / sa, 0.0)
            rhs = rpa + (theta * rhat) @ A.T
            dy = _solve_stack(M, rhs)
            dx = theta * (dy @ A - rhat)
            dz = (rxz - za * dx) / xa
            ds = np.where(hu, rua - dx, 0.0)
            dv = np.where(hu, (rsv - va * ds) / sa, 0.0)
            return dx, ds, dy, dz, dv

        mu = gap[act] / n_compl[act]
        # predictor
        rxz = -xa * za
        rsv = np.where(hu, -sa * va, 0.0)
        dx, ds, dy, dz, dv = newton(rxz, rsv)
        ap = np.minimum(step(xa, dx), step(sa, ds, hu))
        ad = np.minimum(step(za, dz), step(va, dv, hu))
        mu_aff = (((xa + ap[:, None] * dx) * (za + ad[:, None] * dz)).sum(axis=1)
                  + np.where(hu, (sa + ap[:, None] * ds) * (va + ad[:, None] * dv), 0.0).sum(axis=1)) / n_compl[act]
        sigma = np.clip((mu_aff / mu) ** 3, 0.0, 1.0)
        # corrector
        rxz = (sigma * mu)[:, None] - xa * za - dx * dz
        rsv = np.where(hu, (sigma * mu)[:, None] - sa * va - ds * dv, 0.0)
        dx, ds, dy, dz, dv = newton(rxz, rsv)
        ap = np.minimum(1.0, 0.995 * np.minimum(step(xa, dx), step(sa, ds, hu)))[:, None]
        ad = np.minimum(1.0, 0.995 * np.minimum(step(za, dz), step(va, dv, hu)))[:, None]
        x[act] = xa + ap * dx
        s[act] = np.where(hu, sa + ap * ds, 1.0)
        y[act] = y[act] + ad * dy
        z[act] = za + ad * dz
        v[act] = np.where(hu, va + ad * dv, 0.0)

    xs = np.minimum(np.maximum(x + lb, lb), ub)
    return BatchLpResult(x=xs, objective=(c * xs).sum(axis=1), converged=converged, iterations=it)


class LpTemplate:
    """Dense LP family whose constraint matrix is fixed across instances.

    Built from one :class:`ConicProgram`. Inequality rows gain slack columns so
    the batch routine sees only equalities and boxes. Variables whose bounds are
    equal in every instance are substituted out.
    """

    def __init__(self, program: ConicProgram):
        c, A_eq, b_eq, A_le, b_le, lb, ub, const = program.standard_form()
        self.names = list(program.names)
        self.n_orig = program.n
        self.n_le = A_le.shape[0]
        m = A_eq.shape[0] + self.n_le
        n_tot = self.n_orig + self.n_le
        A = np.zeros((m, n_tot))
        A[: A_eq.shape[0], : self.n_orig] = A_eq
        A[A_eq.shape[0]:, : self.n_orig] = A_le
        A[A_eq.shape[0]:, self.n_orig:] = np.eye(self.n_le)
        self.A_full = A
        self.fixed = lb == ub
        self.free = np.concatenate([~self.fixed, np.ones(self.n_le, dtype=bool)])
        self.A = A[:, self.free]
        self.m_eq = A_eq.shape[0]

    def pack(self, c: np.ndarray, b_eq: np.ndarray, b_le: np.ndarray, lb: np.ndarray, ub: np.ndarray,
             cap: float = math.inf):
        """Map per-instance original data to the reduced batch problem.

        ``cap`` replaces infinite upper bounds (slacks included); a finite box keeps
        the dual bounded, which the batch interior point needs on degenerate data.
        """
        k = c.shape[0]
        fixed_vals = lb[:, self.fixed]
        A_fix = self.A_full[:, : self.n_orig][:, self.fixed]
        b = np.concatenate([b_eq, b_le], axis=1) - fixed_vals @ A_fix.T
        c_full = np.concatenate([c, np.zeros((k, self.n_le))], axis=1)
        lb_full = np.concatenate([lb, np.zeros((k, self.n_le))], axis=1)
        ub_full = np.minimum(np.concatenate([ub, np.full((k, self.n_le), np.inf)], axis=1), cap)
        const = (c[:, self.fixed] * fixed_vals).sum(axis=1)
        return c_full[:, self.free], b, lb_full[:, self.free], ub_full[:, self.free], const

    def solve(self, c, b_eq, b_le, lb, ub, tol: float = 1e-9, cap: float = math.inf) -> BatchLpResult:
        """Batch solve; members the interior point leaves unconverged are re-solved with HiGHS."""
        cr, b, lr, ur, const = self.pack(c, b_eq, b_le, lb, ub, cap)
        res = solve_lp_batch(cr, self.A, b, lr, ur, tol=tol)
        k = c.shape[0]
        x_full = np.zeros((k, self.n_orig + self.n_le))
        x_full[:, self.free] = res.x
        x_full[:, : self.n_orig][:, self.fixed] = lb[:, self.fixed]
        x = x_full[:, : self.n_orig]
        obj = res.objective + const
        converged = res.converged.copy()
        for i in np.flatnonzero(~converged):
            xi = self._fallback(c[i], b_eq[i], b_le[i], lb[i], ub[i])
            if xi is not None:
                x[i] = xi
                obj[i] = float(c[i] @ xi)
                converged[i] = True
        return BatchLpResult(x=x, objective=obj, converged=converged, iterations=res.iterations,
                             fallbacks=int((~res.converged).sum()))

    def _fallback(self, c, b_eq, b_le, lb, ub):
        from scipy.optimize import linprog

        A_eq = self.A_full[: self.m_eq, : self.n_orig]
        A_le = self.A_full[self.m_eq:, : self.n_orig]
        out = linprog(c, A_ub=A_le if len(b_le) else None, b_ub=b_le if len(b_le) else None,
                      A_eq=A_eq if len(b_eq) else None, b_eq=b_eq if len(b_eq) else None,
                      bounds=list(zip(lb, np.where(np.isfinite(ub), ub, None))), method="highs")
        return out.x if out.status == 0 else None
