"""Comparison algorithms: personalized and group top-k, static subgroups,
independent rounding, and size-driven pre-partitioning."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .core import Configuration, DomainError, Edge, Instance, RawAssignment
from .lp import FractionalSolution


def _topk(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest scores, descending, ties to the lower index."""
    order = sorted(range(scores.size), key=lambda c: (-scores[c], c))
    return order[:k]


def per_topk(inst: Instance) -> Configuration:
    """Each user gets her k most-preferred items; exact for lambda = 0."""
    assign = np.empty((inst.n, inst.k), dtype=np.int64)
    for u in range(inst.n):
        assign[u] = _topk(inst.pref[u], inst.k)
    return Configuration(assign=assign)


def _group_scores(inst: Instance, members: Sequence[int]) -> np.ndarray:
    """Unit-sum value of co-displaying each item to all of `members`."""
    mem = set(members)
    scores = inst.pref[list(members)].sum(axis=0)
    for e in inst.edges:
        if e.u in mem and e.v in mem:
            scores = scores + e.weight()
    return scores


def group_topk(inst: Instance) -> Configuration:
    """Everyone sees the k items with the best whole-group value, same order."""
    items = _topk(_group_scores(inst, range(inst.n)), inst.k)
    assign = np.tile(np.asarray(items, dtype=np.int64), (inst.n, 1))
    return Configuration(assign=assign)


def subgroup_static(inst: Instance, partition: Sequence[Sequence[int]]) -> Configuration:
    """Group top-k applied independently inside each part of a fixed partition."""
    seen: set[int] = set()
    for part in partition:
        for u in part:
            if not 0 <= u < inst.n or u in seen:
                raise DomainError("partition must be a disjoint cover of the users")
            seen.add(u)
    if len(seen) != inst.n:
        raise DomainError("partition must cover every user")
    assign = np.empty((inst.n, inst.k), dtype=np.int64)
    for part in partition:
        items = _topk(_group_scores(inst, part), inst.k)
        for u in part:
            assign[u] = items
    return Configuration(assign=assign)


def auto_partition(inst: Instance, mode: str, groups: int, seed: int = 0) -> list[list[int]]:
    """Split users into g groups by friendship density or preference similarity."""
    if not 1 <= groups <= inst.n:
        raise DomainError(f"need 1 <= groups <= n, got {groups}")
    if mode == "friendship":
        return _friendship_partition(inst, groups)
    if mode == "preference":
        return _preference_partition(inst, groups, seed)
    raise DomainError(f"unknown partition mode {mode!r}")


def _friendship_partition(inst: Instance, g: int) -> list[list[int]]:
    """Greedy agglomerative merging maximizing internal edges, sizes capped at
    ceil(n/g).  Ties prefer the pair with the smaller total degree (attach the
    most constrained vertices first), then lexicographic order."""
    n = inst.n
    cap = math.ceil(n / g)
    adj = np.zeros((n, n), dtype=np.int64)
    for e in inst.edges:
        adj[e.u, e.v] = adj[e.v, e.u] = 1
    deg = adj.sum(axis=1)
    clusters: list[list[int]] = [[u] for u in range(n)]

    def between(a: list[int], b: list[int]) -> int:
        return int(adj[np.ix_(a, b)].sum())

    while len(clusters) > g:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                if len(clusters[i]) + len(clusters[j]) > cap:
                    continue
                links = between(clusters[i], clusters[j])
                degsum = int(deg[clusters[i]].sum() + deg[clusters[j]].sum())
                key = (-links, degsum, i, j)
                if best is None or key < best[0]:
                    best = (key, i, j)
        if best is not None:
            _, i, j = best
            clusters[i] = clusters[i] + clusters[j]
            del clusters[j]
            continue
        # no pair fits under the cap: dissolve the smallest cluster into others
        src = min(range(len(clusters)), key=lambda i: (len(clusters[i]), clusters[i][0]))
        members = clusters.pop(src)
        for u in members:
            open_idx = [i for i, cl in enumerate(clusters) if len(cl) < cap]
            if not open_idx:
                raise DomainError("cannot rebalance partition under the size cap")
            tgt = max(open_idx, key=lambda i: (between([u], clusters[i]), -i))
            clusters[tgt].append(u)
    clusters = [sorted(cl) for cl in clusters]
    clusters.sort(key=lambda cl: cl[0])
    return clusters


def _preference_partition(inst: Instance, g: int, seed: int) -> list[list[int]]:
    """g-medoids on preference rows with cosine distance, best of 20 restarts."""
    n = inst.n
    norms = np.linalg.norm(inst.pref, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = inst.pref / safe[:, None]
    sim = unit @ unit.T
    sim[norms == 0, :] = 0.0
    sim[:, norms == 0] = 0.0
    dist = 1.0 - sim
    np.fill_diagonal(dist, 0.0)

    rng = np.random.Generator(np.random.Philox(seed))
    best_cost, best_labels = np.inf, None
    for _ in range(20):
        medoids = list(rng.choice(n, size=g, replace=False))
        for _ in range(100):
            labels = np.argmin(dist[:, medoids], axis=1)
            for gi, med in enumerate(medoids):
                labels[med] = gi  # a medoid stays in its own cluster
            new_medoids = []
            for gi in range(g):
                members = np.flatnonzero(labels == gi)
                costs = dist[np.ix_(members, members)].sum(axis=1)
                new_medoids.append(int(members[np.argmin(costs)]))
            if new_medoids == medoids:
                break
            medoids = new_medoids
        cost = float(dist[np.arange(n), np.asarray(medoids)[labels]].sum())
        if cost < best_cost - 1e-12:
            best_cost, best_labels = cost, labels.copy()
    clusters = [sorted(np.flatnonzero(best_labels == gi).tolist()) for gi in range(g)]
    clusters = [cl for cl in clusters if cl]
    clusters.sort(key=lambda cl: cl[0])
    return clusters


def independent_rounding(inst: Instance, frac: FractionalSolution, rng_seed: int = 0) -> RawAssignment:
    """Draw every cell independently from its utility-factor distribution.

    No feasibility repair is attempted; the result may violate no-duplication.
    """
    rng = np.random.Generator(np.random.Philox(rng_seed))
    probs = np.clip(frac.x, 0.0, None).transpose(0, 2, 1)  # (n, k, m)
    cum = probs.cumsum(axis=2)
    total = cum[:, :, -1:]
    if (total <= 0).any():
        raise DomainError("a cell has no positive utility factor to sample from")
    draws = rng.random((inst.n, inst.k, 1)) * total
    items = (draws <= cum).argmax(axis=2)
    return RawAssignment(assign=items)


def st_prepartition(inst: Instance) -> list[tuple[Instance, np.ndarray]]:
    """Split into ceil(n/M) balanced friendship-based sub-instances.

    Each sub-instance keeps only internal edges; the second element of each
    pair maps local user indices back to the original ones.
    """
    if inst.st is None:
        raise DomainError("instance has no teleportation parameters")
    g = math.ceil(inst.n / inst.st.M)
    if g > inst.m:
        raise DomainError(f"ceil(n/M) = {g} exceeds the number of items")
    parts = _friendship_partition(inst, g)
    out = []
    for part in parts:
        local = {u: i for i, u in enumerate(part)}
        edges = []
        for e in inst.edges:
            if e.u in local and e.v in local:
                edges.append(Edge(local[e.u], local[e.v], e.tau_uv, e.tau_vu))
        sub = Instance(
            n=len(part), m=inst.m, k=inst.k,
            pref=inst.pref[part],
            edges=tuple(edges),
            lam=inst.lam,
            st=inst.st,
        )
        out.append((sub, np.asarray(part, dtype=np.int64)))
    return out
