"""Dependent rounding: co-display subgroup formation and both solvers.

The randomized solver repeatedly samples focal parameters (item, slot,
threshold) and co-displays the focal item to every eligible user whose
utility factor clears the threshold.  The deterministic solver scores, for
every (item, slot), the subgroup whose immediate gain plus r times the
remaining relaxation value is largest, and applies the best one.

Randomness comes from a Philox 4x64 counter-based generator, so every run is
bit-reproducible from its seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Configuration, DomainError, Instance, optimistic_utility
from .lp import FractionalSolution

EXACT_SUBSET_LIMIT = 12
_TIE_EPS = 1e-12

_mask_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _masks(q: int) -> tuple[np.ndarray, np.ndarray]:
    """All 2^q subset indicator rows and their sizes, cached."""
    if q not in _mask_cache:
        ints = np.arange(1 << q, dtype=np.uint32)
        bits = ((ints[:, None] >> np.arange(q)) & 1).astype(bool)
        _mask_cache[q] = (bits, bits.sum(axis=1))
    return _mask_cache[q]


@dataclass(frozen=True)
class FocalParams:
    """One rounding step: co-display item c at slot s to factors >= alpha."""

    c: int
    s: int
    alpha: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")


class RoundingState:
    """Mutable state of one rounding run.

    Cells are never rewritten once set.  The utility-factor tensor is copied
    so that the size-capped variant can zero out locked entries without
    touching the caller's fractional solution.
    """

    def __init__(self, inst: Instance, frac: FractionalSolution, cap: Optional[int] = None):
        if frac.x.shape != (inst.n, inst.m, inst.k):
            raise DomainError("fractional solution shape does not match the instance")
        self.inst = inst
        self.x = np.array(frac.x, dtype=float)  # mutable copy
        self.assign = np.full((inst.n, inst.k), -1, dtype=np.int64)
        self.held = np.zeros((inst.n, inst.m), dtype=bool)
        self.counts = np.zeros((inst.m, inst.k), dtype=np.int64)
        self.locked = np.zeros((inst.m, inst.k), dtype=bool)
        self.cap = cap
        self.unfilled = inst.n * inst.k
        self.diagnostics = {"fallback_cells": 0, "samples": 0, "iterations": 0}

    def eligible(self, u: int, c: int, s: int) -> bool:
        return self.assign[u, s] < 0 and not self.held[u, c]

    def eligible_users(self, c: int, s: int) -> np.ndarray:
        return np.flatnonzero((self.assign[:, s] < 0) & ~self.held[:, c])

    def xbar(self) -> np.ndarray:
        """(m, k) maximum factor over currently eligible users; 0 when none."""
        empty = self.assign < 0  # (n, k)
        mask = empty[:, None, :] & ~self.held[:, :, None]  # (n, m, k)
        xb = np.where(mask, self.x, 0.0).max(axis=0)
        xb[self.locked] = 0.0
        return xb

    def assign_users(self, users: Sequence[int], c: int, s: int) -> None:
        for u in users:
            if not self.eligible(u, c, s):
                raise DomainError(f"user {u} is not eligible for item {c} at slot {s}")
            self.assign[u, s] = c
            self.held[u, c] = True
            self.counts[c, s] += 1
            self.unfilled -= 1

    def to_configuration(self) -> Configuration:
        if self.unfilled:
            cells = [(u, s) for u in range(self.inst.n) for s in range(self.inst.k)
                     if self.assign[u, s] < 0]
            raise DomainError(f"unfilled cells remain: {cells}")
        return Configuration(assign=self.assign.copy())


def eligible(state: RoundingState, u: int, c: int, s: int) -> bool:
    """True iff user u has slot s empty and has never been shown item c."""
    return state.eligible(u, c, s)


def csf_step(state: RoundingState, frac: FractionalSolution, focal: FocalParams,
             cap: Optional[int] = None) -> list[int]:
    """Apply one co-display step; returns the users assigned (may be empty).

    Without a cap every eligible user whose factor reaches the threshold is
    assigned.  With a cap, users are added in descending-factor order (ties
    to the lower index) until the (item, slot) subgroup holds `cap` users;
    reaching the cap zeroes the remaining eligible factors and locks the pair.

    `frac` must be the solution the state was built from; thresholds compare
    against the state's working copy, which equals frac until lock-zeroing.
    """
    c, s, alpha = focal.c, focal.s, focal.alpha
    cap = cap if cap is not None else state.cap
    if state.locked[c, s]:
        return []
    elig = state.eligible_users(c, s)
    if elig.size == 0:
        return []
    vals = state.x[elig, c, s]
    target = elig[vals >= alpha]
    if cap is None:
        chosen = list(target)
    else:
        room = cap - int(state.counts[c, s])
        if room <= 0:
            _lock(state, c, s)
            return []
        if target.size > room:
            tvals = state.x[target, c, s]
            order = np.lexsort((target, -tvals))  # factor desc, index asc
            chosen = list(target[order][:room])
        else:
            chosen = list(target)
    state.assign_users(chosen, c, s)
    if cap is not None and state.counts[c, s] >= cap:
        _lock(state, c, s)
    return [int(u) for u in chosen]


def _lock(state: RoundingState, c: int, s: int) -> None:
    rest = state.eligible_users(c, s)
    state.x[rest, c, s] = 0.0
    state.locked[c, s] = True


def _fallback_fill(state: RoundingState) -> None:
    """Assign starved cells (no positive factor left) by optimistic utility.

    Only reachable after size-cap zeroing, or with degenerate fractional
    input; counted in diagnostics.
    """
    inst = state.inst
    ub = optimistic_utility(inst)
    for u in range(inst.n):
        for s in range(inst.k):
            if state.assign[u, s] >= 0:
                continue
            feasible = ~state.held[u]
            if state.x[u, feasible, s].max(initial=0.0) > 0.0:
                continue
            cand = np.flatnonzero(feasible)
            if state.cap is not None:
                open_items = cand[state.counts[cand, s] < state.cap]
                if open_items.size == 0:
                    raise DomainError(
                        f"size cap leaves no feasible item for user {u} at slot {s}"
                    )
                cand = open_items
            best = cand[np.lexsort((cand, -ub[u, cand]))[0]]
            state.assign_users([u], int(best), s)
            state.diagnostics["fallback_cells"] += 1
            if state.cap is not None and state.counts[int(best), s] >= state.cap:
                _lock(state, int(best), s)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def avg(inst: Instance, frac: FractionalSolution, rng_seed: int = 0,
        sampler: str = "uniform", cap: Optional[int] = None,
        stats: Optional[dict] = None) -> Configuration:
    """Randomized rounding: sample focal parameters until every cell is filled.

    The uniform sampler draws (c, s) uniformly and alpha from [0, 1],
    resampling when the target subgroup would be empty.  The advanced sampler
    draws (c, s) proportionally to the maximum eligible factor and alpha from
    [0, that maximum]; its outcome distribution equals the uniform sampler
    conditioned on nonempty outcomes.  When given, `stats` receives the run
    counters (productive iterations, samples drawn, fallback assignments).
    """
    if sampler not in ("uniform", "advanced"):
        raise DomainError(f"unknown sampler {sampler!r}")
    state = RoundingState(inst, frac, cap=cap)
    rng = _rng(rng_seed)
    m, k = inst.m, inst.k
    misses = 0
    while state.unfilled:
        if sampler == "uniform":
            c = int(rng.integers(m))
            s = int(rng.integers(k))
            alpha = float(rng.random())
            state.diagnostics["samples"] += 1
            assigned = csf_step(state, frac, FocalParams(c, s, alpha))
            if assigned:
                state.diagnostics["iterations"] += 1
                misses = 0
            else:
                misses += 1
                if misses >= 64:  # probe for starvation before resampling further
                    if state.xbar().sum() <= 0.0:
                        _fallback_fill(state)
                    misses = 0
        else:
            xb = state.xbar()
            total = xb.sum()
            if total <= 0.0:
                _fallback_fill(state)
                continue
            state.diagnostics["samples"] += 1
            flat = int(rng.choice(m * k, p=(xb / total).ravel()))
            c, s = divmod(flat, k)
            alpha = float(rng.random()) * float(xb[c, s])
            assigned = csf_step(state, frac, FocalParams(c, s, alpha))
            if assigned:
                state.diagnostics["iterations"] += 1
    if stats is not None:
        stats.update(state.diagnostics)
    return state.to_configuration()


def sample_focal(state: RoundingState, rng: np.random.Generator,
                 sampler: str) -> Optional[FocalParams]:
    """Draw one set of focal parameters at the current state (no assignment).

    Used for distribution tests; the uniform sampler returns None on a draw
    whose target set would be empty (a skipped iteration).
    """
    m, k = state.inst.m, state.inst.k
    if sampler == "uniform":
        c = int(rng.integers(m))
        s = int(rng.integers(k))
        alpha = float(rng.random())
        if state.locked[c, s]:
            return None
        elig = state.eligible_users(c, s)
        if elig.size == 0 or state.x[elig, c, s].max(initial=0.0) < alpha:
            return None
        return FocalParams(c, s, alpha)
    xb = state.xbar()
    total = xb.sum()
    if total <= 0.0:
        return None
    flat = int(rng.choice(m * k, p=(xb / total).ravel()))
    c, s = divmod(flat, k)
    return FocalParams(c, s, float(rng.random()) * float(xb[c, s]))


def avg_replay(inst: Instance, frac: FractionalSolution,
               sequence: Sequence[FocalParams]) -> Configuration:
    """Deterministically apply a recorded focal-parameter sequence."""
    state = RoundingState(inst, frac)
    for focal in sequence:
        csf_step(state, frac, focal)
        if state.unfilled == 0:
            break
    return state.to_configuration()  # raises with the unfilled cells listed


# ---------------------------------------------------------------------------
# deterministic solver
# ---------------------------------------------------------------------------


def _best_subset(a: np.ndarray, pairs: list[tuple[int, int, float]],
                 capacity: Optional[int]) -> tuple[float, np.ndarray]:
    """Maximize sum(a[S]) + sum of pair bonuses inside S over nonempty S.

    Exact by enumeration up to EXACT_SUBSET_LIMIT users; beyond that, seeded
    from the best descending-factor prefix and improved by single-user moves.
    All pair bonuses are nonnegative, so the exact problem is supermodular;
    the local search is a documented approximation for large eligible sets.
    """
    q = a.size
    if q <= EXACT_SUBSET_LIMIT:
        bits, sizes = _masks(q)
        scores = bits @ a
        for i, j, b in pairs:
            scores = scores + b * (bits[:, i] & bits[:, j])
        scores[0] = -np.inf
        if capacity is not None and capacity < q:
            scores[sizes > capacity] = -np.inf
        best = int(np.argmax(scores))
        return float(scores[best]), np.flatnonzero(bits[best])

    # greedy seed: prefixes of users ordered by linear score
    order = np.argsort(-a, kind="stable")
    limit = q if capacity is None else min(q, capacity)
    adj: list[list[tuple[int, float]]] = [[] for _ in range(q)]
    for i, j, b in pairs:
        adj[i].append((j, b))
        adj[j].append((i, b))
    best_score, best_mask = -np.inf, None
    score = 0.0
    chosen = np.zeros(q, dtype=bool)
    for t in range(limit):
        u = int(order[t])
        chosen[u] = True
        score += a[u] + sum(b for v, b in adj[u] if chosen[v])
        if score > best_score:
            best_score, best_mask = score, chosen.copy()
    in_set = best_mask
    score = best_score
    for _ in range(4 * q):  # strict improvement, terminates
        moved = False
        for u in range(q):
            delta = a[u] + sum(b for v, b in adj[u] if in_set[v])
            if in_set[u]:
                if in_set.sum() > 1 and -delta > _TIE_EPS:
                    in_set[u] = False
                    score -= delta
                    moved = True
            else:
                if (capacity is None or in_set.sum() < capacity) and delta > _TIE_EPS:
                    in_set[u] = True
                    score += delta
                    moved = True
        if not moved:
            break
    return float(score), np.flatnonzero(in_set)


def _best_prefix_by_factor(vals: np.ndarray, a: np.ndarray,
                           pairs: list[tuple[int, int, float]],
                           capacity: Optional[int]) -> tuple[float, np.ndarray]:
    """Best prefix of the (factor desc, index asc) user ordering.

    The prefixes include every threshold target set (and its size-capped
    truncation), so taking the max against this keeps the deterministic
    solver's step value at least that of every plain threshold step, which is
    what the worst-case guarantee rests on.
    """
    q = vals.size
    order = np.lexsort((np.arange(q), -vals))
    adj: list[list[tuple[int, float]]] = [[] for _ in range(q)]
    for i, j, b in pairs:
        adj[i].append((j, b))
        adj[j].append((i, b))
    limit = q if capacity is None else min(q, capacity)
    chosen = np.zeros(q, dtype=bool)
    best_score, best_mask = -np.inf, None
    score = 0.0
    for t in range(limit):
        u = int(order[t])
        chosen[u] = True
        score += a[u] + sum(b for v, b in adj[u] if chosen[v])
        if score > best_score:
            best_score, best_mask = score, chosen.copy()
    return best_score, np.flatnonzero(best_mask)


def avgd(inst: Instance, frac: FractionalSolution, r: float = 0.25,
         trace: Optional[list] = None, cap: Optional[int] = None) -> Configuration:
    """Deterministic rounding balancing immediate gain against future value.

    Each iteration scores, for every open (item, slot), the target subgroup
    maximizing  ALG(S) + r * OPT_LP(remaining cells after S),  where ALG is
    the realized preference plus social weight inside S and OPT_LP is the
    fractional value of the cells not yet assigned.  The subgroup search
    covers every threshold set and is refined to the exact maximizer (see
    _best_subset); ties break to the lowest item, then slot, then the
    enumeration order of subsets.  With r = 1/4 the output is worst-case
    4-approximate.
    """
    if r < 0:
        raise DomainError("balancing ratio must be nonnegative")
    state = RoundingState(inst, frac, cap=cap)
    n, m, k = inst.n, inst.m, inst.k
    pref = inst.pref
    edges = inst.edges
    weights = [e.weight() for e in edges]
    it = 0
    while state.unfilled:
        _fallback_fill(state)
        if not state.unfilled:
            break
        xt = state.x
        empty = state.assign < 0  # (n, k)
        lpref = np.einsum("uc,ucs->us", pref, xt)  # value of each open cell
        q_es = np.empty((len(edges), k))
        for ei, e in enumerate(edges):
            q_es[ei] = (weights[ei][:, None] * np.minimum(xt[e.u], xt[e.v])).sum(axis=0)
        both_open = np.array([empty[e.u] & empty[e.v] for e in edges]) \
            if edges else np.zeros((0, k), dtype=bool)
        opt_cur = float(lpref[empty].sum()) + float(q_es[both_open].sum())
        # linear loss of closing a cell: its own value plus pair terms shared
        # with still-open same-slot partners
        loss = np.where(empty, lpref, 0.0)
        for ei, e in enumerate(edges):
            shared = both_open[ei] * q_es[ei]
            loss[e.u] += shared
            loss[e.v] += shared

        best = None  # (score, c, s, users)
        for c in range(m):
            held_c = state.held[:, c]
            for s in range(k):
                if state.locked[c, s]:
                    continue
                elig = np.flatnonzero(empty[:, s] & ~held_c)
                if elig.size == 0:
                    continue
                capacity = None
                if state.cap is not None:
                    capacity = state.cap - int(state.counts[c, s])
                    if capacity <= 0:
                        continue
                pos = {int(u): i for i, u in enumerate(elig)}
                a_lin = pref[elig, c] - r * loss[elig, s]
                pairs = []
                for ei, e in enumerate(edges):
                    if e.u in pos and e.v in pos:
                        w_c = float(weights[ei][c])
                        pairs.append((pos[e.u], pos[e.v], w_c + r * float(q_es[ei, s])))
                score, local = _best_subset(a_lin, pairs, capacity)
                if elig.size > EXACT_SUBSET_LIMIT:
                    # guarantee dominance over every plain threshold step
                    t_score, t_local = _best_prefix_by_factor(
                        xt[elig, c, s], a_lin, pairs, capacity)
                    if t_score > score + _TIE_EPS:
                        score, local = t_score, t_local
                if best is None or score > best[0] + _TIE_EPS:
                    users = elig[local]
                    best = (score, c, s, users)
        if best is None:
            _fallback_fill(state)
            continue
        score, c, s, users = best
        if trace is not None:
            in_s = set(int(u) for u in users)
            alg = float(pref[users, c].sum()) + sum(
                float(weights[ei][c]) for ei, e in enumerate(edges)
                if e.u in in_s and e.v in in_s
            )
            lost = float(loss[users, s].sum()) - sum(
                float(q_es[ei, s]) for ei, e in enumerate(edges)
                if e.u in in_s and e.v in in_s
            )
            opt_fut = opt_cur - lost
            trace.append({
                "iteration": it,
                "c": int(c),
                "s": int(s),
                "alpha": float(xt[users, c, s].min()),
                "users": [int(u) for u in users],
                "alg": alg,
                "opt_lp_fut": opt_fut,
                "f": alg + r * opt_fut,
            })
        state.assign_users([int(u) for u in users], int(c), int(s))
        if state.cap is not None and state.counts[c, s] >= state.cap:
            _lock(state, int(c), int(s))
        state.diagnostics["iterations"] += 1
        it += 1
    return state.to_configuration()


def avg_st(inst: Instance, frac: FractionalSolution, rng_seed: int = 0,
           sampler: str = "uniform", deterministic: bool = False,
           r: float = 0.25) -> Configuration:
    """Size-capped rounding; the output never exceeds M users per (item, slot)."""
    if inst.st is None:
        raise DomainError("instance has no teleportation parameters")
    if deterministic:
        return avgd(inst, frac, r=r, cap=inst.st.M)
    return avg(inst, frac, rng_seed=rng_seed, sampler=sampler, cap=inst.st.M)


def best_of(inst: Instance, frac: FractionalSolution, seeds: Sequence[int],
            sampler: str = "uniform", cap: Optional[int] = None,
            objective: Optional[Callable[[Configuration], float]] = None) -> Configuration:
    """Run the randomized solver once per seed and keep the best output."""
    from .core import total_objective

    if objective is None:
        objective = lambda cfg: total_objective(inst, cfg, "unit_sum")
    best_cfg, best_val = None, -np.inf
    for seed in seeds:
        cfg = avg(inst, frac, rng_seed=seed, sampler=sampler, cap=cap)
        val = objective(cfg)
        if val > best_val:
            best_cfg, best_val = cfg, val
    assert best_cfg is not None
    return best_cfg
