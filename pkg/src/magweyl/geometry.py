"""Operator coefficient data and the linear algebra of the magnetic field.

A :class:`Scenario` bundles the inverse metric ``g^{jk}``, the magnetic
vector potential ``V_j`` and the scalar potential ``V`` of the operator

    A = sum_{jk} P_j g^{jk} P_k + V,    P_j = h D_j - mu V_j,

on an axis-aligned box.  All field maps are vectorised: they accept an array of
points with trailing dimension ``d`` and broadcast over the leading axes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .errors import (
    DerivativeError,
    DomainError,
    FieldError,
    PairingError,
    RankDeficientError,
)

PAIR_TOL = 1e-8
ZERO_TOL = 1e-10
DEFAULT_C0 = 1e8


@dataclass(frozen=True)
class Scenario:
    """Coefficients of a magnetic Schrodinger operator on a box.

    ``potential_jacobian(X)[..., k, j]`` is ``d V_k / d x_j``.  When the
    analytic derivatives are missing, central differences with step
    ``1e-5 * diameter`` are used and checked against the half step.
    """

    name: str
    dimension: int
    lower: tuple
    upper: tuple
    metric: Callable
    vector_potential: Callable
    scalar_potential: Callable
    potential_jacobian: Optional[Callable] = None
    potential_gradient: Optional[Callable] = None
    constant_field: bool = False
    analytic: Optional[dict] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.dimension
        if d < 1:
            raise DomainError(f"dimension must be a positive integer, got {d}", "dimension")
        if len(self.lower) != d or len(self.upper) != d:
            raise DomainError("domain bounds must have one entry per axis", "domain")
        if any(b <= a for a, b in zip(self.lower, self.upper)):
            raise DomainError("domain upper bounds must exceed lower bounds", "domain")

    @property
    def extent(self):
        return np.asarray(self.upper, float) - np.asarray(self.lower, float)

    @property
    def diameter(self):
        return float(np.linalg.norm(self.extent))

    @property
    def center(self):
        return 0.5 * (np.asarray(self.lower, float) + np.asarray(self.upper, float))

    @property
    def volume(self):
        return float(np.prod(self.extent))

    def contains(self, x, slack=1e-12):
        x = np.asarray(x, float)
        lo = np.asarray(self.lower) - slack * self.diameter
        hi = np.asarray(self.upper) + slack * self.diameter
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def require_inside(self, x):
        if not np.all(self.contains(x)):
            raise DomainError(f"point {np.asarray(x).tolist()} lies outside the domain of {self.name!r}", "x")

    def grid(self, n, margin=0.0):
        """Tensor grid of ``n`` points per axis, shrunk by ``margin`` (fraction of extent)."""
        n = np.broadcast_to(np.asarray(n, int), (self.dimension,))
        lo = np.asarray(self.lower) + margin * self.extent
        hi = np.asarray(self.upper) - margin * self.extent
        axes = [np.linspace(a, b, k) if k > 1 else np.array([(a + b) / 2]) for a, b, k in zip(lo, hi, n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    # -- derivatives -----------------------------------------------------
    def _step(self):
        return 1e-5 * self.diameter

    def vector_potential_jacobian(self, X):
        X = np.asarray(X, float)
        if self.potential_jacobian is not None:
            return np.asarray(self.potential_jacobian(X), float)
        return _central_jacobian(self.vector_potential, X, self._step())

    def potential_grad(self, X):
        X = np.asarray(X, float)
        if self.potential_gradient is not None:
            return np.asarray(self.potential_gradient(X), float)
        fn = lambda Y: np.asarray(self.scalar_potential(Y), float)[..., None]
        return _central_jacobian(fn, X, self._step())[..., 0, :]

    def intensity(self, X):
        """Antisymmetric ``F_{jk} = d_j V_k - d_k V_j`` at every point of ``X``."""
        J = self.vector_potential_jacobian(X)
        F = np.swapaxes(J, -1, -2) - J
        return 0.5 * (F - np.swapaxes(F, -1, -2))

    def check(self, n=5, c=1e6):
        """Sample the metric bounds and finiteness of all field maps.

        Returns the sampled ``(min eigenvalue, max eigenvalue)`` of ``g``.
        """
        X = self.grid(n)
        g = np.asarray(self.metric(X), float)
        values = [g, self.vector_potential(X), self.scalar_potential(X)]
        if not all(np.all(np.isfinite(v)) for v in values):
            raise FieldError(f"scenario {self.name!r} has non-finite field values", "scenario")
        if not np.allclose(g, np.swapaxes(g, -1, -2), rtol=0, atol=1e-12 * np.abs(g).max()):
            raise FieldError("metric is not symmetric", "metric")
        ev = np.linalg.eigvalsh(g)
        lo, hi = float(ev.min()), float(ev.max())
        if lo < 1.0 / c or hi > c:
            raise FieldError(f"metric eigenvalues [{lo}, {hi}] violate the bound c={c}", "metric")
        return lo, hi


def _central_jacobian(fn, X, delta):
    """Richardson-checked central differences; returns ``J[..., k, j] = d fn_k / d x_j``."""
    d = X.shape[-1]

    def cd(step):
        cols = []
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            cols.append((np.asarray(fn(X + e), float) - np.asarray(fn(X - e), float)) / (2 * step))
        return np.stack(cols, axis=-1)

    coarse, fine = cd(delta), cd(delta / 2)
    if not (np.all(np.isfinite(coarse)) and np.all(np.isfinite(fine))):
        raise DerivativeError("derivative evaluation produced non-finite values")
    scale = 1.0 + np.abs(fine)
    if np.any(np.abs(coarse - fine) > 1e-6 * scale):
        raise DerivativeError("central differences disagree between step and half step")
    return (4 * fine - coarse) / 3


# -- characteristic frequencies ----------------------------------------------

def spd_sqrt(g):
    """Symmetric square root of an SPD matrix (batched)."""
    w, U = np.linalg.eigh(g)
    if np.any(w <= 0):
        raise FieldError("metric is not positive definite", "metric")
    return (U * np.sqrt(w)[..., None, :]) @ np.swapaxes(U, -1, -2)


def _check_skew(F):
    F = np.asarray(F, float)
    scale = max(np.abs(F).max(), 1e-300)
    if np.abs(F + np.swapaxes(F, -1, -2)).max() > 1e-12 * scale:
        raise FieldError("intensity matrix is not skew-symmetric", "F")
    return 0.5 * (F - np.swapaxes(F, -1, -2))


def characteristic_frequencies(g, F, pair_tol=PAIR_TOL, zero_tol=ZERO_TOL):
    """Positive frequencies ``f_1 >= ... >= f_r`` with ``spec(gF) = {+-i f_p, 0}``.

    The spectrum is read off the symmetrised matrix ``M = g^{1/2} F g^{1/2}``:
    ``i M`` is Hermitian with eigenvalues ``+-f_p`` and zeros.  Values below
    ``zero_tol * max f`` count as zeros; unmatched ``+-`` pairs raise
    :class:`PairingError`.

    Returns
    -------
    frequencies : ndarray, shape (r,)
    rank : int
        ``2 r``.
    """
    g = np.asarray(g, float)
    if not np.allclose(g, g.T, rtol=0, atol=1e-12 * np.abs(g).max()):
        raise FieldError("metric is not symmetric", "g")
    F = _check_skew(F)
    s = spd_sqrt(0.5 * (g + g.T))
    M = s @ F @ s
    ev = np.linalg.eigvalsh(1j * M)
    top = np.abs(ev).max()
    if top == 0:
        return np.zeros(0), 0
    nonzero = ev[np.abs(ev) > zero_tol * top]
    pos = np.sort(nonzero[nonzero > 0])[::-1]
    neg = np.sort(-nonzero[nonzero < 0])[::-1]
    if len(pos) != len(neg) or np.any(np.abs(pos - neg) > pair_tol * top):
        raise PairingError("eigenvalues of g F do not come in +-i f pairs")
    return 0.5 * (pos + neg), 2 * len(pos)


def frequencies_batch(g, F, zero_tol=ZERO_TOL):
    """Vectorised frequencies for stacks of ``(g, F)``.

    Returns an array ``(..., d // 2)`` sorted descending per point; entries for
    missing pairs (rank deficiency) are zero.
    """
    s = spd_sqrt(np.asarray(g, float))
    M = s @ np.asarray(F, float) @ s
    ev = np.linalg.eigvalsh(1j * M)
    d = ev.shape[-1]
    f = -ev[..., : d // 2][..., ::-1]  # eigvalsh is ascending: the negatives come first
    f = np.sort(f, axis=-1)[..., ::-1]
    top = np.max(np.abs(ev), axis=-1, keepdims=True)
    return np.where(f > zero_tol * top, f, 0.0)


@dataclass(frozen=True)
class FieldIntensity:
    """Magnetic intensity data at one point."""

    F: np.ndarray
    g: np.ndarray
    gF: np.ndarray
    frequencies: np.ndarray
    rank: int
    inv_norm: float  # spectral norm of (gF)^{-1}; inf when singular
    c0: float = DEFAULT_C0

    @property
    def dimension(self):
        return self.F.shape[0]

    @property
    def r(self):
        return self.rank // 2

    @property
    def full_rank(self):
        return self.rank == self.dimension and self.inv_norm <= self.c0

    def require_full_rank(self):
        if not self.full_rank:
            raise RankDeficientError(
                f"rank deficient intensity: rank {self.rank} of {self.dimension}, |(gF)^-1| = {self.inv_norm}"
            )


def field_intensity(g, F, c0=DEFAULT_C0):
    """Assemble :class:`FieldIntensity` from a metric and an intensity matrix."""
    g = np.asarray(g, float)
    F = _check_skew(F)
    f, rank = characteristic_frequencies(g, F)
    gF = g @ F
    if rank == F.shape[0]:
        inv_norm = float(np.linalg.norm(np.linalg.inv(gF), 2))
    else:
        inv_norm = float("inf")
    return FieldIntensity(F=F, g=g, gF=gF, frequencies=f, rank=rank, inv_norm=inv_norm, c0=c0)


def intensity_matrix(scenario: Scenario, x, c0=DEFAULT_C0) -> FieldIntensity:
    """Intensity matrix, reduced matrix ``g F`` and frequencies at ``x``."""
    x = np.asarray(x, float)
    scenario.require_inside(x)
    F = scenario.intensity(x)
    g = np.asarray(scenario.metric(x), float)
    return field_intensity(g, F, c0=c0)


# -- symplectic frame ---------------------------------------------------------

@dataclass(frozen=True)
class SymplecticFrame:
    """Basis ``B`` bringing ``(g, F)`` to ``(I, canonical blocks)``.

    With ``x = B y`` the inverse metric becomes ``B^{-1} g B^{-T} = I`` and the
    intensity becomes ``B^T F B`` with ``F_{j, j+r} = f_j``.
    """

    basis: np.ndarray
    blocks: tuple  # ((j, j + r, f_j), ...)

    @property
    def frequencies(self):
        return np.array([b[2] for b in self.blocks])

    def transformed_metric(self, g):
        Binv = np.linalg.inv(self.basis)
        return Binv @ g @ Binv.T

    def transformed_intensity(self, F):
        return self.basis.T @ F @ self.basis


def canonical_intensity(frequencies):
    f = np.asarray(frequencies, float)
    r = len(f)
    F = np.zeros((2 * r, 2 * r))
    F[np.arange(r), np.arange(r) + r] = f
    F[np.arange(r) + r, np.arange(r)] = -f
    return F


def symplectic_frame(intensity: FieldIntensity, tol=1e-10) -> SymplecticFrame:
    """Frame in which the metric is the identity and ``F`` is block canonical.

    Frequencies are ordered descending.  Raises :class:`RankDeficientError`
    unless ``2r = d``.
    """
    if intensity.rank != intensity.dimension:
        raise RankDeficientError(f"rank deficient: rank {intensity.rank} < {intensity.dimension}")
    g, F, f = intensity.g, intensity.F, intensity.frequencies
    d, r = intensity.dimension, intensity.r
    blocks = tuple((j, j + r, float(f[j])) for j in range(r))
    target = canonical_intensity(f)
    scale = f.max()
    if np.abs(g - np.eye(d)).max() <= tol and np.abs(F - target).max() <= tol * scale:
        return SymplecticFrame(np.eye(d), blocks)

    s = spd_sqrt(g)
    M = s @ F @ s
    T, Z = sla.schur(M, output="real")
    pairs = []
    j = 0
    while j < d:
        if j + 1 < d and abs(T[j + 1, j]) > tol * scale:
            a, b = Z[:, j], Z[:, j + 1]
            # normal 2x2 block [[0, w], [-w, 0]]; orient so that w > 0
            w = T[j, j + 1]
            if w < 0:
                a, b, w = b, a, -w
            pairs.append((abs(w), a, b))
            j += 2
        else:
            raise RankDeficientError("zero eigenvalue in the intensity spectrum")
    pairs.sort(key=lambda p: -p[0])
    O = np.zeros((d, d))
    for p, (_, a, b) in enumerate(pairs):
        O[:, p] = a
        O[:, p + r] = b
    B = s @ O
    resid = np.abs(B.T @ F @ B - target).max()
    if resid > 1e3 * tol * scale:
        raise PairingError(f"symplectic frame residual {resid:.3e} too large")
    return SymplecticFrame(B, blocks)


def liouville_density(intensity: FieldIntensity, g=None):
    """``f_1 ... f_r sqrt(det g_jk)`` with ``(g_jk)`` the inverse of ``g^{jk}``.

    Cross-checked against ``|det F|^{1/2}`` and ``det(gF) = (f_1...f_r)^2``.
    """
    intensity.require_full_rank()
    g = intensity.g if g is None else np.asarray(g, float)
    prod_f = float(np.prod(intensity.frequencies))
    value = prod_f / np.sqrt(np.linalg.det(g))
    via_det = np.sqrt(abs(np.linalg.det(intensity.F)))
    det_gF = np.linalg.det(g @ intensity.F)
    if abs(value - via_det) > 1e-9 * value or abs(det_gF - prod_f**2) > 1e-9 * prod_f**2:
        raise PairingError("Liouville density inconsistent with det F")
    return value


# -- drift dynamics -----------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    potential: np.ndarray

    def max_potential_drift(self):
        return float(np.abs(self.potential - self.potential[0]).max())

    def to_csv(self, path):
        d = self.points.shape[1]
        header = ["t"] + [f"x{j + 1}" for j in range(d)] + ["V"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, x, v in zip(self.times, self.points, self.potential):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(v))])


def _require_constant_field(scenario, atol=1e-10):
    X = np.vstack([scenario.grid(3), scenario.center[None, :]])
    F = scenario.intensity(X)
    g = np.asarray(scenario.metric(X), float)
    if np.abs(F - F[-1]).max() > atol * max(1.0, np.abs(F).max()) or np.abs(g - g[-1]).max() > atol:
        raise FieldError(f"scenario {scenario.name!r} does not have constant g and F", "scenario")
    return g[-1], F[-1]


def drift_flow(scenario: Scenario, x0, t_end, dt) -> Trajectory:
    """Integrate ``dx/dt = (F^{-1}) grad V`` with classical RK4 (time rescaled by mu).

    The step is ``t_end / ceil(t_end / dt)`` so the last sample lands on ``t_end``.
    """
    _, F = _require_constant_field(scenario)
    if np.linalg.matrix_rank(F) < F.shape[0]:
        raise RankDeficientError("intensity matrix is singular; drift undefined")
    fmat = np.linalg.inv(F)
    if dt <= 0 or t_end < 0:
        raise DomainError("need dt > 0 and t_end >= 0", "dt")

    def rhs(x):
        return fmat @ scenario.potential_grad(x)

    n = max(int(np.ceil(t_end / dt - 1e-9)), 1) if t_end > 0 else 0
    step = t_end / n if n else 0.0
    x = np.asarray(x0, float).copy()
    pts = np.empty((n + 1, x.size))
    pts[0] = x
    for i in range(n):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * step * k1)
        k3 = rhs(x + 0.5 * step * k2)
        k4 = rhs(x + step * k3)
        x = x + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        pts[i + 1] = x
    times = np.arange(n + 1) * step
    V = np.asarray(scenario.scalar_potential(pts), float)
    return Trajectory(times, pts, V)
