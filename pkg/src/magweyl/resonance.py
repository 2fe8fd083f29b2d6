"""Resonances among characteristic frequencies and the non-degeneracy checks.

Index sets are 0-based throughout.  Two tolerances are kept apart: the
relative *detection* tolerance of :func:`enumerate_resonances` (integer
relations in the exact-arithmetic sense) and the *grouping* tolerance
``eps`` of the partitions, which describes stability regions.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, DomainError, MagweylError, RankDeficientError
from .geometry import Scenario, frequencies_batch
from .weyl import landau_energies

MAX_ORDER_GUARD = 8
ALPHA_GUARD = 10**6


@dataclass(frozen=True)
class ResonanceRelation:
    gamma: tuple
    order: int
    residual: float


def _lattice_vectors(r, max_order):
    """All integer vectors with ``2 <= |gamma|_1 <= max_order``, first nonzero entry positive."""
    out = []

    def rec(prefix, budget, started):
        if len(prefix) == r:
            if started and sum(map(abs, prefix)) >= 2:
                out.append(tuple(prefix))
            return
        for v in range(-budget, budget + 1):
            if not started and v < 0:
                continue
            rec(prefix + [v], budget - abs(v), started or v != 0)

    rec([], max_order, False)
    return np.array(out, dtype=np.int64).reshape(-1, r)


def enumerate_resonances(f, max_order, tol=1e-9):
    """Integer relations ``sum_j gamma_j f_j = 0`` up to ``max_order``.

    ``+gamma`` and ``-gamma`` are reported once (lexicographically positive
    representative).  A relation is kept when its residual is at most
    ``tol * max(f)``.  Results are sorted by order, then lexicographically.
    """
    f = np.asarray(f, float)
    if f.ndim != 1 or f.size == 0 or np.any(f <= 0):
        raise DomainError("frequencies must be a non-empty list of positive numbers", "f")
    if max_order > MAX_ORDER_GUARD:
        raise BudgetError(f"max_order {max_order} exceeds the guard {MAX_ORDER_GUARD}", "max_order")
    if max_order < 2:
        return []
    G = _lattice_vectors(f.size, int(max_order))
    if G.size == 0:
        return []
    resid = np.abs(G @ f)
    keep = resid <= tol * f.max()
    rels = [
        ResonanceRelation(tuple(int(v) for v in g), int(np.abs(g).sum()), float(res))
        for g, res in zip(G[keep], resid[keep])
    ]
    rels.sort(key=lambda rel: (rel.order, rel.gamma))
    return rels


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        a, b = self.find(i), self.find(j)
        if a != b:
            # smallest index represents the group
            self.parent[max(a, b)] = min(a, b)
            return True
        return False

    def groups(self):
        out = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), []).append(i)
        return sorted(tuple(sorted(g)) for g in out.values())


def partition_second_order(f, eps):
    """Close ``|f_i - f_j| <= eps * max f`` under transitivity."""
    f = np.asarray(f, float)
    uf = _UnionFind(f.size)
    thr = eps * f.max() if f.size else 0.0
    for i, j in itertools.combinations(range(f.size), 2):
        if abs(f[i] - f[j]) <= thr:
            uf.union(i, j)
    return uf.groups()


def partition_third_order(f, groups_M, eps):
    """Coarsen ``groups_M`` until no triple ``|f_i - f_j - f_k| <= eps max f`` straddles groups.

    ``j == k`` is allowed.
    """
    f = np.asarray(f, float)
    r = f.size
    uf = _UnionFind(r)
    covered = sorted(i for g in groups_M for i in g)
    if covered != list(range(r)):
        raise DomainError("groups_M is not a partition of the frequency indices", "groups_M")
    for g in groups_M:
        for i in g[1:]:
            uf.union(g[0], i)
    thr = eps * f.max() if r else 0.0
    triples = [
        (i, j, k)
        for i in range(r)
        for j in range(r)
        for k in range(j, r)
        if abs(f[i] - f[j] - f[k]) <= thr
    ]
    changed = True
    while changed:
        changed = False
        for i, j, k in triples:
            changed |= uf.union(i, j)
            changed |= uf.union(i, k)
    return uf.groups()


@dataclass(frozen=True)
class ResonancePartition:
    groups_M: tuple
    groups_N: tuple
    eps: float

    def __post_init__(self):
        for m in self.groups_M:
            owners = [n for n in self.groups_N if set(m) <= set(n)]
            if len(owners) != 1:
                raise MagweylError(f"second-order group {m} is not inside exactly one third-order group")


def resonance_partition(f, eps):
    M = partition_second_order(f, eps)
    N = partition_third_order(f, M, eps)
    return ResonancePartition(tuple(M), tuple(N), eps)


# -- condition checkers -------------------------------------------------------

@dataclass
class ConditionReport:
    """Outcome of a sampled inequality check.

    ``margin`` is the worst value of (left-hand side - threshold) over the
    samples; ``witness`` records where it is attained.
    """

    condition_id: str
    satisfied: bool
    margin: float
    witness: dict
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "condition_id": self.condition_id,
            "satisfied": bool(self.satisfied),
            "margin": float(self.margin),
            "witness": _jsonable(self.witness),
            "details": _jsonable(self.details),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _grid_fields(scenario, x_grid):
    X = np.atleast_2d(np.asarray(x_grid, float))
    if X.size == 0:
        raise DomainError("empty sample grid", "x_grid")
    scenario.require_inside(X)
    F = scenario.intensity(X)
    g = np.asarray(scenario.metric(X), float)
    f = frequencies_batch(g, F)
    if np.any(f <= 0):
        raise RankDeficientError("intensity is rank deficient at a sample point")
    V = np.asarray(scenario.scalar_potential(X), float)
    return X, f, V


def _nearest_level_distance(f, V, mu_h, tau, cap_extra):
    """``min_alpha |E_alpha(x) mu h + V(x) - tau|`` per point, with the minimising alpha."""
    target = tau - V  # level energy closest to this is what we want
    cap = (np.abs(target).max() + cap_extra + 2 * f.max() * mu_h) / mu_h
    alphas = landau_energies(f.min(axis=0), cap, guard=ALPHA_GUARD)[0]
    E = ((2 * alphas + 1) @ f.T).T  # (points, levels)
    dist = np.abs(E * mu_h - target[:, None])
    idx = np.argmin(dist, axis=1)
    return dist[np.arange(len(V)), idx], alphas[idx]


def check_gap_condition(scenario: Scenario, mu, h, eps1, x_grid, tau=0.0):
    """Spectral gap: ``|E_alpha mu h + V(x) - tau| >= eps1`` for all alpha and samples.

    An exact hit (distance zero) is never satisfied, even with ``eps1 = 0``.
    """
    X, f, V = _grid_fields(scenario, x_grid)
    dist, alpha = _nearest_level_distance(f, V, mu * h, tau, 2 * eps1)
    i = int(np.argmin(dist))
    margin = float(dist[i] - eps1)
    return ConditionReport(
        "ellipticity_gap",
        bool(margin >= 0 and dist[i] > 0),
        margin,
        {"x": X[i], "alpha": tuple(int(a) for a in alpha[i]), "distance": float(dist[i])},
        {"mu_h": mu * h, "tau": tau, "samples": len(X)},
    )


def check_microhyp_constant(scenario: Scenario, variant, eps1, x_grid, mu=None, h=None, alpha_bar=None, tau=0.0):
    """Pointwise non-degeneracy conditions for constant-field scenarios.

    ``weak``: ``|grad V| >= eps1``.
    ``strong``: ``min_alpha |E_alpha mu h + V| + |grad V| >= eps1`` (needs ``mu``, ``h``).
    ``superstrong``: ``|grad(V / E_alpha_bar)| >= eps1`` (needs ``alpha_bar``).
    """
    if variant not in ("weak", "strong", "superstrong"):
        raise DomainError(f"unknown variant {variant!r}", "variant")
    if variant == "strong" and (mu is None or h is None):
        raise DomainError("the strong variant needs mu and h", "mu")
    if variant == "superstrong" and alpha_bar is None:
        raise DomainError("the superstrong variant needs alpha_bar", "alpha_bar")
    X, f, V = _grid_fields(scenario, x_grid)
    gradV = scenario.potential_grad(X)
    grad_norm = np.linalg.norm(gradV, axis=-1)
    witness_extra = {}
    if variant == "weak":
        value = grad_norm
        cid = "microhyp_const_weak"
    elif variant == "strong":
        dist, alpha = _nearest_level_distance(f, V, mu * h, tau, 2 * eps1)
        value = dist + grad_norm
        cid = "microhyp_const_strong"
        witness_extra["alpha"] = alpha
    else:
        ab = np.asarray(alpha_bar, float)
        if ab.shape != (f.shape[1],):
            raise DomainError("alpha_bar must have one entry per frequency", "alpha_bar")

        def ratio(Y):
            Y = np.atleast_2d(Y)
            fy = frequencies_batch(np.asarray(scenario.metric(Y)), scenario.intensity(Y))
            return np.asarray(scenario.scalar_potential(Y)) / ((2 * ab + 1) @ fy.T)

        step = 1e-5 * scenario.diameter
        grads = []
        for j in range(X.shape[1]):
            e = np.zeros(X.shape[1])
            e[j] = step
            grads.append((ratio(X + e) - ratio(X - e)) / (2 * step))
        value = np.linalg.norm(np.stack(grads, axis=-1), axis=-1)
        cid = "microhyp_superstrong"
    i = int(np.argmin(value))
    margin = float(value[i] - eps1)
    witness = {"x": X[i], "value": float(value[i])}
    for k, v in witness_extra.items():
        witness[k] = tuple(int(a) for a in v[i])
    return ConditionReport(cid, bool(margin >= 0), margin, witness, {"samples": len(X), "variant": variant})


def _directions(d, per_plane):
    """Unit vectors: ``per_plane`` angles in every coordinate 2-plane."""
    angles = 2 * np.pi * np.arange(per_plane) / per_plane
    dirs = []
    for a, b in itertools.combinations(range(d), 2):
        v = np.zeros((per_plane, d))
        v[:, a] = np.cos(angles)
        v[:, b] = np.sin(angles)
        dirs.append(v)
    return np.unique(np.round(np.vstack(dirs), 15), axis=0)


def _level_vectors(groups, total_lo, total_hi, samples, mu_h=None, f=None):
    """Admissible level vectors ``(tau_n)`` with ``sum tau_n`` in ``[total_lo, total_hi]``."""
    k = len(groups)
    if mu_h is not None:
        # discrete levels: tau_n = sum_{i in n} (2 alpha_i + 1) mu h f_i
        out = []
        cap = total_hi / mu_h
        per_group = []
        for grp in groups:
            fg = f[list(grp)]
            al = landau_energies(fg, cap, guard=ALPHA_GUARD)[1]
            per_group.append(np.unique(np.round(al * mu_h, 14)))
        for combo in itertools.product(*per_group):
            s = sum(combo)
            if total_lo <= s <= total_hi:
                out.append(combo)
        return np.array(out, float).reshape(-1, k)
    totals = np.linspace(max(total_lo, 0.0), max(total_hi, 0.0), samples)
    if k == 1:
        return totals[:, None]
    # barycentric grid on the simplex for each total
    weights = [w for w in itertools.product(range(samples), repeat=k) if sum(w) == samples - 1]
    W = np.array(weights, float) / (samples - 1)
    return (totals[:, None, None] * W[None]).reshape(-1, k)


def check_microhyp_general(
    scenario: Scenario,
    groups_N,
    eps,
    eps1,
    x_grid,
    direction_samples=64,
    level_samples=16,
    mu_h=None,
    step=None,
):
    """Sampled certificate for the matrix microhyperbolicity condition.

    Near-scalar block model: ``a_jk = f_j(x) delta_jk`` and ``a_0 = V(x)``.
    For every sample point and admissible level vector ``tau`` (``|sum tau_n +
    V| <= eps``; or the discrete Landau set when ``mu_h`` is given) the
    checker maximises over sampled directions ``l`` the minimum of
    ``sum_j l . grad(f_j / V) |zeta_j|^2`` on ``{sum_{j in n} f_j |zeta_j|^2 =
    tau_n}``.  That inner problem is linear in ``|zeta_j|^2``, so its minimum
    sits at the vertices ``|zeta_j|^2 = tau_n / f_j`` and is evaluated exactly.
    The outcome is a heuristic certificate at the stated resolution, not a proof.
    """
    if direction_samples <= 0 or level_samples <= 1:
        raise DomainError("sampling budgets must be positive", "direction_samples")
    X, f, V = _grid_fields(scenario, x_grid)
    n_pts, d = X.shape
    r = f.shape[1]
    groups = [tuple(g) for g in groups_N]
    if sorted(i for g in groups for i in g) != list(range(r)):
        raise DomainError("groups_N is not a partition of the frequency indices", "groups_N")

    delta = step or 1e-5 * scenario.diameter

    def ratio(Y):
        fy = frequencies_batch(np.asarray(scenario.metric(Y)), scenario.intensity(Y))
        return fy / np.asarray(scenario.scalar_potential(Y), float)[:, None]

    # grad(f_j / V): (points, r, d)
    G = np.empty((n_pts, r, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = delta
        G[:, :, k] = (ratio(X + e) - ratio(X - e)) / (2 * delta)

    dirs = _directions(d, direction_samples)
    # candidate directions from the data itself (still checked like any other)
    cands = G.reshape(n_pts, -1, d)
    worst = (np.inf, None)
    for p in range(n_pts):
        extra = np.vstack([cands[p], cands[p].sum(axis=0, keepdims=True)])
        norms = np.linalg.norm(extra, axis=1)
        extra = extra[norms > 0] / norms[norms > 0, None]
        L = np.vstack([dirs, extra, -extra])
        C = L @ G[p].T  # (dirs, r): l . grad(f_j / V)
        per = C / f[p][None, :]
        mins = np.stack([per[:, list(g)].min(axis=1) for g in groups], axis=1)  # (dirs, groups)
        taus = _level_vectors(groups, -V[p] - eps, -V[p] + eps, level_samples, mu_h, f[p])
        if taus.shape[0] == 0:
            continue  # no admissible level: nothing to certify at this point
        vals = taus @ mins.T  # (levels, dirs)
        best = vals.max(axis=1)
        q = int(np.argmin(best))
        if best[q] < worst[0]:
            worst = (best[q], {"x": X[p], "tau": taus[q], "direction": L[int(np.argmax(vals[q]))]})
    if worst[1] is None:
        return ConditionReport("general_0_1", True, np.inf, {}, {"note": "no admissible levels"})
    margin = float(worst[0] - eps1)
    return ConditionReport(
        "general_0_1",
        bool(margin >= 0),
        margin,
        worst[1],
        {
            "samples": n_pts,
            "directions": int(dirs.shape[0]),
            "level_samples": level_samples,
            "certificate": "sampled heuristic",
        },
    )
