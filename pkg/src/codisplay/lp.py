"""Linear-program models and a self-contained dense simplex solver.

Two relaxations of the assignment program are provided: the full per-slot
model and a compact slot-free model whose optimum provably coincides with the
full one.  Both use the unit-sum objective (scaled preference on the
item-per-user variables, combined directed social weight on the edge
variables), so instances with lambda != 1/2 must be passed through
``core.scale_preferences`` first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import DomainError, Instance

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9


@dataclass
class LpModel:
    """A linear (or, for export, integer) program in row form, maximization."""

    maximize: bool = True
    var_names: list[str] = field(default_factory=list)
    var_index: dict[str, int] = field(default_factory=dict)
    obj: list[float] = field(default_factory=list)
    upper: list[Optional[float]] = field(default_factory=list)
    binary: list[bool] = field(default_factory=list)
    rows: list[tuple[np.ndarray, np.ndarray, str, float]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add_var(self, name: str, obj: float = 0.0, upper: Optional[float] = None,
                binary: bool = False) -> int:
        if name in self.var_index:
            raise ValueError(f"duplicate variable {name}")
        j = len(self.var_names)
        self.var_names.append(name)
        self.var_index[name] = j
        self.obj.append(obj)
        self.upper.append(upper)
        self.binary.append(binary)
        return j

    def add_row(self, cols, coefs, sense: str, rhs: float) -> None:
        if sense not in ("<=", "=", ">="):
            raise ValueError(f"bad sense {sense!r}")
        cols = np.asarray(cols, dtype=np.int64)
        if cols.size and (cols.min() < 0 or cols.max() >= len(self.var_names)):
            raise ValueError("constraint references unregistered variable")
        self.rows.append((cols, np.asarray(coefs, dtype=float), sense, float(rhs)))

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    @property
    def num_rows(self) -> int:
        return len(self.rows)


@dataclass
class LpResult:
    objective: float
    x: np.ndarray
    status: str  # optimal | infeasible | unbounded | iteration_limit
    names: tuple[str, ...] = ()

    def value(self, name: str) -> float:
        return float(self.x[self.names.index(name)])


class _Tableau:
    """Dense two-phase primal simplex.

    Pricing is Dantzig (most negative reduced cost); after a run of degenerate
    pivots with no objective progress the solver switches to Bland's rule,
    which guarantees termination, and switches back once progress resumes.
    """

    STALL_LIMIT = 64

    def __init__(self, A: np.ndarray, b: np.ndarray, senses: list[str], c: np.ndarray):
        m, n = A.shape
        # normalize rhs >= 0
        for i in range(m):
            if b[i] < 0:
                A[i] *= -1.0
                b[i] = -b[i]
                senses[i] = {"<=": ">=", ">=": "<=", "=": "="}[senses[i]]
        slack_of, art_of = {}, {}
        ncols = n
        for i, s in enumerate(senses):
            if s == "<=":
                slack_of[i] = ncols; ncols += 1
            elif s == ">=":
                slack_of[i] = ncols; ncols += 1
                art_of[i] = ncols; ncols += 1
            else:
                art_of[i] = ncols; ncols += 1
        T = np.zeros((m + 1, ncols + 1))
        T[:m, :n] = A
        T[:m, -1] = b
        basis = np.empty(m, dtype=np.int64)
        for i, s in enumerate(senses):
            if s == "<=":
                T[i, slack_of[i]] = 1.0
                basis[i] = slack_of[i]
            elif s == ">=":
                T[i, slack_of[i]] = -1.0
                T[i, art_of[i]] = 1.0
                basis[i] = art_of[i]
            else:
                T[i, art_of[i]] = 1.0
                basis[i] = art_of[i]
        self.T, self.basis, self.m, self.n = T, basis, m, n
        self.c_struct = c
        self.art_cols = np.array(sorted(art_of.values()), dtype=np.int64)
        self.iterations = 0

    def _set_costs(self, c_full: np.ndarray) -> None:
        T, m = self.T, self.m
        T[m, :] = 0.0
        T[m, : c_full.size] = -c_full
        for i in range(m):
            cb = c_full[self.basis[i]] if self.basis[i] < c_full.size else 0.0
            if cb != 0.0:
                T[m] += cb * T[i]

    def _pivot(self, r: int, j: int) -> None:
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, j] = 0.0
        T[r, j] = 1.0
        self.basis[r] = j

    def _ratio_row(self, j: int) -> Optional[int]:
        T, m = self.T, self.m
        col = T[:m, j]
        ok = col > PIVOT_TOL
        if not ok.any():
            return None
        ratios = np.full(m, np.inf)
        ratios[ok] = T[:m, -1][ok] / col[ok]
        best = ratios.min()
        # lowest basis index among ties: Bland-style anti-cycling in the ratio test
        tied = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
        return int(tied[np.argmin(self.basis[tied])])

    def iterate(self, allowed: np.ndarray, max_iter: int) -> str:
        T, m = self.T, self.m
        stall = 0
        bland = False
        last_obj = T[m, -1]
        while True:
            if self.iterations >= max_iter:
                return "iteration_limit"
            row = T[m, :-1]
            neg = np.flatnonzero(allowed & (row < -PIVOT_TOL))
            if neg.size == 0:
                return "optimal"
            j = int(neg[0]) if bland else int(neg[np.argmin(row[neg])])
            r = self._ratio_row(j)
            if r is None:
                return "unbounded"
            self._pivot(r, j)
            self.iterations += 1
            if T[m, -1] > last_obj + PIVOT_TOL:
                last_obj = T[m, -1]
                stall = 0
                bland = False
            else:
                stall += 1
                if stall >= self.STALL_LIMIT:
                    bland = True


def solve_lp(model: LpModel, max_iter: int = 1_000_000) -> LpResult:
    """Solve a relaxed model with the built-in simplex.

    Finite upper bounds are handled as explicit rows.  The returned status is
    one of optimal / infeasible / unbounded / iteration_limit; on optimal the
    primal feasibility residual is verified below 1e-7.
    """
    n = model.num_vars
    rows = list(model.rows)
    for j, ub in enumerate(model.upper):
        if ub is not None and math.isfinite(ub):
            rows.append((np.array([j]), np.array([1.0]), "<=", float(ub)))
    m = len(rows)
    A = np.zeros((m, n))
    b = np.empty(m)
    senses = []
    for i, (cols, coefs, sense, rhs) in enumerate(rows):
        A[i, cols] = coefs
        b[i] = rhs
        senses.append(sense)
    c = np.asarray(model.obj, dtype=float)
    if not model.maximize:
        c = -c

    tab = _Tableau(A, b, senses, c)
    ncols = tab.T.shape[1] - 1

    # phase 1: drive artificial variables to zero
    if tab.art_cols.size:
        c1 = np.zeros(ncols)
        c1[tab.art_cols] = -1.0
        tab._set_costs(c1)
        status = tab.iterate(np.ones(ncols, dtype=bool), max_iter)
        if status != "optimal":
            return LpResult(0.0, np.zeros(n), status, tuple(model.var_names))
        if tab.T[tab.m, -1] < -FEAS_TOL:
            return LpResult(0.0, np.zeros(n), "infeasible", tuple(model.var_names))
        art_set = set(tab.art_cols.tolist())
        drop = []
        for i in range(tab.m):
            if tab.basis[i] in art_set:
                row = tab.T[i, :-1].copy()
                row[tab.art_cols] = 0.0
                cand = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if cand.size:
                    tab._pivot(i, int(cand[0]))
                else:
                    drop.append(i)  # redundant constraint
        if drop:
            keep = [i for i in range(tab.m) if i not in set(drop)]
            tab.T = np.vstack([tab.T[keep], tab.T[-1:]])
            tab.basis = tab.basis[keep]
            tab.m = len(keep)

    # phase 2
    c2 = np.zeros(ncols)
    c2[:n] = c
    tab._set_costs(c2)
    allowed = np.ones(ncols, dtype=bool)
    allowed[tab.art_cols] = False
    status = tab.iterate(allowed, max_iter)
    if status != "optimal":
        return LpResult(0.0, np.zeros(n), status, tuple(model.var_names))

    x_full = np.zeros(ncols)
    x_full[tab.basis] = tab.T[: tab.m, -1]
    x = x_full[:n]
    obj = float(c @ x)
    if not model.maximize:
        obj = -obj

    _check_residuals(model, x)
    return LpResult(obj, x, "optimal", tuple(model.var_names))


def _check_residuals(model: LpModel, x: np.ndarray) -> None:
    worst = 0.0
    for cols, coefs, sense, rhs in model.rows:
        lhs = float(coefs @ x[cols])
        if sense == "<=":
            worst = max(worst, lhs - rhs)
        elif sense == ">=":
            worst = max(worst, rhs - lhs)
        else:
            worst = max(worst, abs(lhs - rhs))
    worst = max(worst, float(-x.min(initial=0.0)))
    for j, ub in enumerate(model.upper):
        if ub is not None:
            worst = max(worst, float(x[j]) - ub)
    if worst > FEAS_TOL:
        raise ArithmeticError(f"simplex returned an infeasible point (residual {worst:.3g})")


# ---------------------------------------------------------------------------
# model builders
# ---------------------------------------------------------------------------


def _xname(u, c, s):
    return f"x_{u}_{c}_{s}"


def _xuname(u, c):
    return f"xu_{u}_{c}"


def build_full_lp(inst: Instance) -> LpModel:
    """Per-slot relaxation with unit-sum objective.

    Callers must pass a lambda = 1/2 instance (scale_preferences otherwise).
    Upper bounds of 1 on every variable are implied by the row structure and
    therefore not added explicitly.
    """
    mdl = LpModel(meta={"kind": "full", "n": inst.n, "m": inst.m, "k": inst.k})
    for u in range(inst.n):
        for c in range(inst.m):
            for s in range(inst.k):
                mdl.add_var(_xname(u, c, s), binary=True)
    for u in range(inst.n):
        for c in range(inst.m):
            mdl.add_var(_xuname(u, c), obj=float(inst.pref[u, c]), binary=True)
    for e in range(inst.num_edges):
        for c in range(inst.m):
            for s in range(inst.k):
                mdl.add_var(f"y_{e}_{c}_{s}", binary=True)
    for e in range(inst.num_edges):
        w = inst.edge_weight(e)
        for c in range(inst.m):
            mdl.add_var(f"ye_{e}_{c}", obj=float(w[c]), binary=True)
    idx = mdl.var_index

    for u in range(inst.n):
        for c in range(inst.m):
            cols = [idx[_xname(u, c, s)] for s in range(inst.k)]
            mdl.add_row(cols, np.ones(inst.k), "<=", 1.0)  # item at most once per user
    for u in range(inst.n):
        for s in range(inst.k):
            cols = [idx[_xname(u, c, s)] for c in range(inst.m)]
            mdl.add_row(cols, np.ones(inst.m), "=", 1.0)  # one item per slot
    for u in range(inst.n):
        for c in range(inst.m):
            cols = [idx[_xuname(u, c)]] + [idx[_xname(u, c, s)] for s in range(inst.k)]
            mdl.add_row(cols, [1.0] + [-1.0] * inst.k, "=", 0.0)
    for e in range(inst.num_edges):
        for c in range(inst.m):
            cols = [idx[f"ye_{e}_{c}"]] + [idx[f"y_{e}_{c}_{s}"] for s in range(inst.k)]
            mdl.add_row(cols, [1.0] + [-1.0] * inst.k, "=", 0.0)
    for e, edge in enumerate(inst.edges):
        for c in range(inst.m):
            for s in range(inst.k):
                yj = idx[f"y_{e}_{c}_{s}"]
                mdl.add_row([yj, idx[_xname(edge.u, c, s)]], [1.0, -1.0], "<=", 0.0)
                mdl.add_row([yj, idx[_xname(edge.v, c, s)]], [1.0, -1.0], "<=", 0.0)
    return mdl


def build_simplified_lp(inst: Instance) -> LpModel:
    """Compact slot-free relaxation; optimum equals the full relaxation."""
    mdl = LpModel(meta={"kind": "simp", "n": inst.n, "m": inst.m, "k": inst.k})
    for u in range(inst.n):
        for c in range(inst.m):
            mdl.add_var(_xuname(u, c), obj=float(inst.pref[u, c]), upper=1.0, binary=True)
    for e in range(inst.num_edges):
        w = inst.edge_weight(e)
        for c in range(inst.m):
            mdl.add_var(f"ye_{e}_{c}", obj=float(w[c]), binary=True)
    idx = mdl.var_index
    for u in range(inst.n):
        cols = [idx[_xuname(u, c)] for c in range(inst.m)]
        mdl.add_row(cols, np.ones(inst.m), "=", float(inst.k))
    for e, edge in enumerate(inst.edges):
        for c in range(inst.m):
            yj = idx[f"ye_{e}_{c}"]
            mdl.add_row([yj, idx[_xuname(edge.u, c)]], [1.0, -1.0], "<=", 0.0)
            mdl.add_row([yj, idx[_xuname(edge.v, c)]], [1.0, -1.0], "<=", 0.0)
    return mdl


def build_st_lp(inst: Instance) -> LpModel:
    """Full relaxation extended with teleportation terms and subgroup size cuts.

    The social coefficient is split between aligned co-display (1 - d_tel on
    the per-slot edge variables) and any-slot co-display (d_tel on the new
    edge variables).  The per-(item, slot) size cuts are a deliberate
    strengthening: they do not cut any feasible integer point.
    """
    if inst.st is None:
        raise DomainError("instance has no teleportation parameters")
    d = inst.st.d_tel
    mdl = build_full_lp(inst)
    mdl.meta["kind"] = "st"
    idx = mdl.var_index
    for e in range(inst.num_edges):
        w = inst.edge_weight(e)
        for c in range(inst.m):
            mdl.obj[idx[f"ye_{e}_{c}"]] = float((1.0 - d) * w[c])
    for e in range(inst.num_edges):
        w = inst.edge_weight(e)
        for c in range(inst.m):
            mdl.add_var(f"z_{e}_{c}", obj=float(d * w[c]), binary=True)
    idx = mdl.var_index
    for e, edge in enumerate(inst.edges):
        for c in range(inst.m):
            zj = idx[f"z_{e}_{c}"]
            mdl.add_row([zj, idx[_xuname(edge.u, c)]], [1.0, -1.0], "<=", 0.0)
            mdl.add_row([zj, idx[_xuname(edge.v, c)]], [1.0, -1.0], "<=", 0.0)
    for c in range(inst.m):
        for s in range(inst.k):
            cols = [idx[_xname(u, c, s)] for u in range(inst.n)]
            mdl.add_row(cols, np.ones(inst.n), "<=", float(inst.st.M))
    return mdl


# ---------------------------------------------------------------------------
# fractional solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FractionalSolution:
    """Per-slot utility factors x[u][c][s] from a relaxation optimum.

    Entries below solver noise (1e-9) are clamped to exact zero so that
    threshold comparisons and starvation detection treat them as absent.
    """

    x: np.ndarray  # (n, m, k)

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        arr[np.abs(arr) < 1e-9] = 0.0
        arr.setflags(write=False)
        object.__setattr__(self, "x", arr)

    def check(self, atol: float = 1e-6) -> None:
        x = self.x
        if ((x < -atol) | (x > 1 + atol)).any():
            raise DomainError("utility factors outside [0, 1]")
        slot_sums = x.sum(axis=1)  # (n, k)
        if not np.allclose(slot_sums, 1.0, atol=atol):
            raise DomainError("per-(user, slot) factors must sum to 1")
        item_sums = x.sum(axis=2)  # (n, m)
        if (item_sums > 1 + atol).any():
            raise DomainError("per-(user, item) factors must sum to at most 1")


def expand_solution(result: LpResult, inst: Instance) -> FractionalSolution:
    """Spread a compact optimum uniformly over slots: x[u][c][s] = xu/k."""
    if result.status != "optimal":
        raise DomainError(f"cannot expand a result with status {result.status!r}")
    x = np.empty((inst.n, inst.m, inst.k))
    for u in range(inst.n):
        for c in range(inst.m):
            x[u, c, :] = result.value(_xuname(u, c)) / inst.k
    frac = FractionalSolution(np.clip(x, 0.0, 1.0))
    frac.check()
    return frac


def frac_from_full_result(result: LpResult, inst: Instance) -> FractionalSolution:
    """Collect the per-slot variables of a full or teleportation model optimum."""
    if result.status != "optimal":
        raise DomainError(f"result status is {result.status!r}")
    x = np.empty((inst.n, inst.m, inst.k))
    for u in range(inst.n):
        for c in range(inst.m):
            for s in range(inst.k):
                x[u, c, s] = result.value(_xname(u, c, s))
    return FractionalSolution(np.clip(x, 0.0, 1.0))


def solve_fractional(inst: Instance) -> tuple[FractionalSolution, float]:
    """Convenience path: compact relaxation, solved and expanded.

    Returns the per-slot factors and the relaxation optimum (unit-sum).  The
    instance must already be in the lambda = 1/2 convention.
    """
    res = solve_lp(build_simplified_lp(inst))
    if res.status != "optimal":
        raise DomainError(f"relaxation not solved to optimality: {res.status}")
    return expand_solution(res, inst), res.objective


# ---------------------------------------------------------------------------
# model export
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def export_model(model: LpModel, fmt: str = "lp_file", integrality: bool = False) -> str:
    """Render the model as CPLEX LP-format text."""
    if fmt != "lp_file":
        raise DomainError(f"unknown export format {fmt!r}")
    out = ["Maximize" if model.maximize else "Minimize"]
    terms = [
        f"{'+ ' if coef >= 0 else '- '}{_fmt(abs(coef))} {name}"
        for name, coef in zip(model.var_names, model.obj)
        if coef != 0.0
    ]
    if not terms:
        terms = [f"+ 0 {model.var_names[0]}"]
    out.append(" obj: " + " ".join(terms).lstrip("+ "))
    out.append("Subject To")
    sense_txt = {"<=": "<=", ">=": ">=", "=": "="}
    for i, (cols, coefs, sense, rhs) in enumerate(model.rows):
        parts = []
        for j, coef in zip(cols, coefs):
            parts.append(f"{'+ ' if coef >= 0 else '- '}{_fmt(abs(coef))} {model.var_names[j]}")
        out.append(f" c{i + 1}: " + " ".join(parts).lstrip("+ ") + f" {sense_txt[sense]} {_fmt(rhs)}")
    bound_lines = [
        f" 0 <= {name} <= {_fmt(ub)}"
        for name, ub in zip(model.var_names, model.upper)
        if ub is not None
    ]
    if bound_lines:
        out.append("Bounds")
        out.extend(bound_lines)
    if integrality:
        out.append("Binary")
        for name, flag in zip(model.var_names, model.binary):
            if flag:
                out.append(f" {name}")
    out.append("End")
    return "\n".join(out) + "\n"
