"""Magnetic Weyl densities, Landau levels and their integration against cutoffs.

Convention: the Heaviside function is closed, ``theta(0) = 1``, so densities
count eigenvalues ``lambda <= tau``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, DomainError, RankDeficientError
from .geometry import Scenario, frequencies_batch

QUAD_BUDGET = 2 * 10**8
CHUNK = 1 << 15


@dataclass(frozen=True)
class WeylParams:
    mu: float
    h: float
    tau: float = 0.0

    def __post_init__(self):
        if not (0 < self.h <= 1):
            raise DomainError(f"h must lie in (0, 1], got {self.h}", "h")
        if not self.mu >= 1:
            raise DomainError(f"mu must be >= 1, got {self.mu}", "mu")

    @property
    def mu_h(self):
        return self.mu * self.h


@dataclass(frozen=True)
class LandauLevel:
    alpha: tuple
    energy: float


def landau_energies(f, cap, guard=10**6):
    """Multi-indices with ``E_alpha = sum (2 alpha_j + 1) f_j <= cap``.

    Returns ``(alphas, energies)`` sorted by energy, near-ties
    (relative ``1e-12``) broken lexicographically in ``alpha``.
    """
    f = np.asarray(f, float)
    r = f.size
    base = f.sum()
    if cap < base:
        return np.zeros((0, r), dtype=np.int64), np.zeros(0)
    bounds = [int(math.floor((cap - base) / (2 * fj) + 1e-12)) for fj in f]
    size = math.prod(b + 1 for b in bounds)
    if size > guard:
        raise BudgetError(f"Landau level enumeration needs {size} tuples (guard {guard})", "cap")
    A = np.array(list(itertools.product(*[range(b + 1) for b in bounds])), dtype=np.int64).reshape(-1, r)
    E = (2 * A + 1) @ f
    keep = E <= cap * (1 + 1e-12)
    A, E = A[keep], E[keep]
    order = np.argsort(E, kind="stable")
    A, E = A[order], E[order]
    # re-sort runs of near-equal energies lexicographically
    if E.size:
        ties = np.concatenate([[0], np.cumsum(np.diff(E) > 1e-12 * np.maximum(E[1:], 1e-300))])
        keys = [A[:, j] for j in reversed(range(r))] + [ties]
        order = np.lexsort(keys)
        A, E = A[order], E[order]
    return A, E


def landau_levels(f, cap):
    """Sorted :class:`LandauLevel` list with energy ``<= cap`` (empty below the ground level)."""
    f = np.asarray(f, float)
    if np.any(f <= 0):
        raise DomainError("frequencies must be positive", "f")
    A, E = landau_energies(f, cap)
    return [LandauLevel(tuple(int(a) for a in row), float(e)) for row, e in zip(A, E)]


def distinct_levels(f, cap, rtol=1e-12):
    """Distinct Landau energies ``<= cap`` with their alpha multiplicities."""
    _, E = landau_energies(f, cap)
    out = []
    for e in E:
        if out and abs(e - out[-1][0]) <= rtol * e:
            out[-1][1] += 1
        else:
            out.append([float(e), 1])
    return [(e, m) for e, m in out]


def unit_ball_volume(k):
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


class WeylDensity:
    """Counting density ``prefactor(x) * sum_k phi_p(arg_k(x))``.

    kind ``"full_rank"``: ``phi_0 = theta`` over Landau levels;
    kind ``"general"``: positive part to the power ``d/2 - r``;
    kind ``"standard"``: the non-magnetic Weyl term.
    """

    def __init__(self, scenario: Scenario, params: WeylParams, kind="full_rank"):
        if kind not in ("full_rank", "general", "standard"):
            raise DomainError(f"unknown density kind {kind!r}", "kind")
        self.scenario = scenario
        self.params = params
        self.kind = kind
        self.d = scenario.dimension

    # -- field data ---------------------------------------------------
    def _fields(self, X):
        sc = self.scenario
        g = np.asarray(sc.metric(X), float)
        V = np.asarray(sc.scalar_potential(X), float)
        sqrt_g = 1.0 / np.sqrt(np.linalg.det(g))
        if self.kind == "standard":
            return None, V, sqrt_g
        f = frequencies_batch(g, sc.intensity(X))
        return f, V, sqrt_g

    def rank_at(self, X):
        f, _, _ = self._fields(np.atleast_2d(X))
        return 2 * (f > 0).sum(axis=-1)

    def alpha_set(self, X):
        """Every alpha that can be active at any of the points ``X``."""
        X = np.atleast_2d(np.asarray(X, float))
        if self.kind == "standard":
            return None
        f, V, _ = self._fields(X)
        f = self._active_frequencies(f)
        fmin = f.reshape(-1, f.shape[-1]).min(axis=0) * (1 - 1e-9)
        cap = (self.params.tau - V.min()) / self.params.mu_h
        return landau_energies(fmin, cap)[0]

    def _active_frequencies(self, f):
        r = (f > 0).sum(axis=-1)
        if np.any(r != r.flat[0]):
            raise RankDeficientError("rank of the intensity changes across the evaluation points")
        r = int(r.flat[0])
        if self.kind == "full_rank" and 2 * r != self.d:
            raise RankDeficientError(f"full-rank density needs 2r = d, got rank {2 * r} in d = {self.d}")
        return f[..., :r]

    def terms(self, X, alphas=None):
        """``(prefactor, args, power)`` at points ``X`` (shape ``(..., d)``)."""
        X = np.asarray(X, float)
        p = self.params
        f, V, sqrt_g = self._fields(X)
        if self.kind == "standard" or (self.kind == "general" and not np.any(f > 0)):
            d = self.d
            pref = unit_ball_volume(d) * (2 * math.pi * p.h) ** (-d) * sqrt_g
            return pref, (p.tau - V)[..., None], d / 2
        f = self._active_frequencies(f)
        r = f.shape[-1]
        if alphas is None:
            alphas = self.alpha_set(X.reshape(-1, self.d))
        E = f @ (2 * alphas + 1).T  # (..., K)
        args = p.tau - E * p.mu_h - V[..., None]
        prod_f = np.prod(f, axis=-1)
        if self.kind == "full_rank":
            pref = (2 * math.pi) ** (-r) * (p.mu / p.h) ** r * prod_f * sqrt_g
            return pref, args, 0.0
        k = self.d - 2 * r
        pref = unit_ball_volume(k) * (2 * math.pi) ** (r - self.d) * p.mu**r * p.h ** (r - self.d) * prod_f * sqrt_g
        return pref, args, self.d / 2 - r

    @staticmethod
    def phi(args, power):
        if power == 0:
            return (args >= 0).astype(float)
        return np.maximum(args, 0.0) ** power

    def __call__(self, X, alphas=None):
        pref, args, power = self.terms(X, alphas)
        return pref * self.phi(args, power).sum(axis=-1)

    def active_count(self, X, alphas=None):
        _, args, _ = self.terms(X, alphas)
        return (args >= 0).sum(axis=-1)


def _point_eval(kind, scenario, x, params):
    x = np.asarray(x, float)
    scenario.require_inside(x)
    dens = WeylDensity(scenario, params, kind)
    out = dens(x)
    return float(out) if np.ndim(out) == 0 else out


def magnetic_weyl_full_rank(scenario: Scenario, x, params: WeylParams):
    """Full-rank magnetic Weyl density at ``x`` (vectorised over leading axes)."""
    return _point_eval("full_rank", scenario, x, params)


def magnetic_weyl_general(scenario: Scenario, x, params: WeylParams):
    """Partial-rank magnetic Weyl density; reduces to :func:`standard_weyl` when ``r = 0``."""
    return _point_eval("general", scenario, x, params)


def standard_weyl(scenario: Scenario, x, params: WeylParams):
    """``omega_d (2 pi h)^{-d} (tau - V)_+^{d/2} sqrt(g)``."""
    return _point_eval("standard", scenario, x, params)


# -- cutoffs -------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffFunction:
    """Indicator of a sub-box, or a smooth bump ``exp(1 - 1/(1 - |y|^2))``.

    For the bump ``y = (x - center) / radii``; an infinite radius makes the
    bump constant along that axis (meant for periodic axes).
    """

    kind: str
    lower: tuple = ()
    upper: tuple = ()
    center: tuple = ()
    radii: tuple = ()

    @classmethod
    def indicator(cls, lower, upper):
        return cls("indicator", lower=tuple(map(float, lower)), upper=tuple(map(float, upper)))

    @classmethod
    def bump(cls, center, radii):
        return cls("bump", center=tuple(map(float, center)), radii=tuple(map(float, radii)))

    @classmethod
    def zero(cls, d):
        return cls("zero", lower=(0.0,) * d, upper=(0.0,) * d)

    def __call__(self, X):
        X = np.asarray(X, float)
        if self.kind == "zero":
            return np.zeros(X.shape[:-1])
        if self.kind == "indicator":
            lo, hi = np.asarray(self.lower), np.asarray(self.upper)
            return np.all((X >= lo) & (X <= hi), axis=-1).astype(float)
        c, rad = np.asarray(self.center), np.asarray(self.radii)
        finite = np.isfinite(rad)
        y = (X[..., finite] - c[finite]) / rad[finite]
        s = np.sum(y * y, axis=-1)
        out = np.zeros_like(s)
        inside = s < 1
        out[inside] = np.exp(1 - 1 / (1 - s[inside]))
        return out

    def bounds(self, scenario: Scenario):
        """Integration box: the support, clipped to the domain on unbounded axes."""
        dlo, dhi = np.asarray(scenario.lower, float), np.asarray(scenario.upper, float)
        if self.kind in ("indicator", "zero"):
            return np.asarray(self.lower, float), np.asarray(self.upper, float)
        c, rad = np.asarray(self.center), np.asarray(self.radii)
        lo = np.where(np.isfinite(rad), c - rad, dlo)
        hi = np.where(np.isfinite(rad), c + rad, dhi)
        return lo, hi

    def validate(self, scenario: Scenario, periodic_axes=()):
        """Support inside the domain: closed box for indicators, strictly inside for bumps."""
        if self.kind == "zero":
            return
        d = scenario.dimension
        for attr in ("lower", "upper") if self.kind == "indicator" else ("center", "radii"):
            if len(getattr(self, attr)) != d:
                raise DomainError(f"cutoff {attr} must have {d} entries", "psi")
        lo, hi = self.bounds(scenario)
        dlo, dhi = np.asarray(scenario.lower, float), np.asarray(scenario.upper, float)
        tol = 1e-12 * scenario.diameter
        for j in range(d):
            if self.kind == "bump" and not np.isfinite(self.radii[j]):
                if j not in periodic_axes:
                    raise DomainError(f"bump is unbounded along non-periodic axis {j}", "psi")
                continue
            if self.kind == "bump":
                ok = lo[j] > dlo[j] and hi[j] < dhi[j]
            else:
                ok = lo[j] >= dlo[j] - tol and hi[j] <= dhi[j] + tol and hi[j] > lo[j]
            if not ok:
                raise DomainError(f"cutoff support leaves the domain along axis {j}", "psi")


# -- quadrature ------------------------------------------------------------------

@dataclass(frozen=True)
class IntegrationResult:
    value: float
    quad_error_estimate: float
    active_levels: int
    cells: int
    refined_cells: int

    def to_dict(self):
        return {
            "value": self.value,
            "quad_error_estimate": self.quad_error_estimate,
            "active_levels": self.active_levels,
            "cells": self.cells,
            "refined_cells": self.refined_cells,
        }


def _box_fraction(b, s):
    """Fraction of the unit cube where ``b + s . u >= 0`` (rows of ``b``, ``s``)."""
    b = b.copy()
    s = s.copy()
    neg = s < 0
    b += np.where(neg, s, 0.0).sum(axis=1)
    s = np.abs(s)
    # the fraction is scale invariant; normalising avoids underflow in prod(s)
    scale = np.abs(b) + s.sum(axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    b /= scale
    s /= scale[:, None]
    keep = s > 1e-7
    out = np.empty(b.shape[0])
    d = s.shape[1]
    patterns = keep @ (1 << np.arange(d))
    for pat in np.unique(patterns):
        rows = patterns == pat
        dims = [j for j in range(d) if pat >> j & 1]
        bb = b[rows]
        # dropped dims contribute at most s_j <= 1e-7 scale: fold half into the offset
        bb = bb + 0.5 * np.where(keep[rows], 0.0, s[rows]).sum(axis=1)
        k = len(dims)
        if k == 0:
            out[rows] = (bb >= 0).astype(float)
            continue
        ss = s[rows][:, dims]
        t = -bb
        cdf = np.zeros(bb.shape[0])
        for S in itertools.product((0, 1), repeat=k):
            shift = ss @ np.array(S, float)
            cdf += (-1) ** sum(S) * np.maximum(t - shift, 0.0) ** k
        cdf /= math.factorial(k) * np.prod(ss, axis=1)
        out[rows] = 1.0 - np.clip(cdf, 0.0, 1.0)
    return out


def integrate_density(density: WeylDensity, psi: CutoffFunction, n=64, bounds=None, budget=QUAD_BUDGET):
    """Integrate ``density * psi`` by tensor midpoint rule with one dyadic refinement.

    Cells whose active-level count differs between centre and corners are
    split into ``2^d`` children.  In a child, each Heaviside term contributes
    the exact volume fraction of the cell on which the affine interpolant of
    its argument is non-negative; power-law terms use the child midpoint.
    The error estimate compares the refined contribution of flagged cells
    with the same rule applied at parent level.
    """
    sc = density.scenario
    d = sc.dimension
    if psi.kind == "zero":
        return IntegrationResult(0.0, 0.0, 0, 0, 0)
    lo, hi = (psi.bounds(sc) if bounds is None else map(np.asarray, bounds))
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n = np.broadcast_to(np.asarray(n, int), (d,))
    w = (hi - lo) / n
    ncell = int(np.prod(n))
    if ncell * 2 * (1 + 2**d) > budget:  # at least one level; checked before touching nodes
        raise BudgetError(f"quadrature needs more than {ncell} cells x levels (budget {budget})", "resolution")

    corners = np.array(list(itertools.product((-0.5, 0.5), repeat=d)))
    faces = np.vstack([np.eye(d) * 0.5, -np.eye(d) * 0.5])
    node_axes = [np.linspace(a, b, k + 1) for a, b, k in zip(lo, hi, n)]
    nodes = np.stack(np.meshgrid(*node_axes, indexing="ij"), axis=-1).reshape(-1, d)
    alphas = density.alpha_set(np.vstack([nodes, (lo + hi)[None] / 2]))
    K = 1 if alphas is None else max(len(alphas), 1)
    if ncell * (K + 1) * (1 + 2**d) > budget:
        raise BudgetError(f"quadrature needs ~{ncell * K} level evaluations (budget {budget})", "resolution")

    total, err, refined, active_max = [], 0.0, 0, 0
    idx_all = np.arange(ncell)
    for start in range(0, ncell, CHUNK):
        idx = idx_all[start : start + CHUNK]
        multi = np.stack(np.unravel_index(idx, tuple(n)), axis=-1)
        C = lo + (multi + 0.5) * w
        pref, args, power = density.terms(C, alphas)
        psi_c = psi(C)
        count_c = (args >= 0).sum(axis=-1)
        active_max = max(active_max, int(count_c.max(initial=0)))
        flagged = np.zeros(len(idx), bool)
        for off in corners:
            _, a_k, _ = density.terms(C + off * w, alphas)
            flagged |= (a_k >= 0).sum(axis=-1) != count_c
        vol = float(np.prod(w))
        plain = pref * psi_c * density.phi(args, power).sum(axis=-1) * vol
        vals = np.where(flagged, 0.0, plain)
        if flagged.any():
            Cf = C[flagged]
            refined += int(len(Cf))
            parent = _refined_value(density, psi, Cf, w, alphas, faces, power)
            kids = np.zeros(len(Cf))
            for off in corners:
                kids += _refined_value(density, psi, Cf + off * w / 2, w / 2, alphas, faces, power)
            err += float(np.abs(kids - parent).sum())
            vals[flagged] = kids
        total.append(vals)
    value = float(np.sum(np.concatenate(total))) if total else 0.0
    return IntegrationResult(value, err, active_max, ncell, refined)


def _refined_value(density, psi, C, w, alphas, faces, power):
    vol = float(np.prod(w))
    pref, args, _ = density.terms(C, alphas)
    weight = pref * psi(C) * vol
    if power != 0:
        return weight * density.phi(args, power).sum(axis=-1)
    d = C.shape[1]
    # gradient of every argument from face centres (exact for affine arguments)
    plus = np.stack([density.terms(C + faces[j] * w, alphas)[1] for j in range(d)], axis=-1)
    minus = np.stack([density.terms(C + faces[d + j] * w, alphas)[1] for j in range(d)], axis=-1)
    slope = plus - minus  # change across the cell along each axis
    m, K = args.shape
    b = (args - 0.5 * slope.sum(axis=-1)).reshape(-1)
    frac = _box_fraction(b, slope.reshape(-1, d)).reshape(m, K)
    return weight * frac.sum(axis=-1)
