"""Lattice discretisation of the magnetic Schrodinger operator and eigenvalue counting.

Hopping terms carry Peierls link phases, so the discrete operator is gauge
covariant and the flux through every plaquette is reproduced exactly for
linear vector potentials.  Counting is done either by dense Hermitian
eigensolves or by Sylvester inertia of a banded ``L D L^T`` factorisation of
the real symmetric embedding ``[[Re H, -Im H], [Im H, Re H]]``.
"""
from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import (
    AliasingError,
    BudgetError,
    DomainError,
    FactorizationError,
    FieldError,
    FluxQuantizationError,
    ResolutionError,
)
from .geometry import Scenario, frequencies_batch

DENSE_BUDGET = 8192
INERTIA_BUDGET = 2 * 10**10  # flops of the banded factorisation
BOUNDARIES = ("dirichlet", "periodic")


@dataclass(frozen=True)
class Lattice:
    """Tensor grid on the scenario box.

    Dirichlet axes carry ``n`` interior points with spacing ``L / (n + 1)``;
    periodic axes carry ``n`` points with spacing ``L / n`` starting at the
    lower edge.
    """

    dims: tuple
    lower: tuple
    upper: tuple
    boundary: tuple

    def __post_init__(self):
        d = len(self.dims)
        if len(self.lower) != d or len(self.upper) != d or len(self.boundary) != d:
            raise DomainError("lattice dims, bounds and boundary must have equal length", "lattice")
        for n in self.dims:
            if int(n) != n or n < 4:
                raise DomainError(f"lattice needs at least 4 points per axis, got {n}", "n")
        for b in self.boundary:
            if b not in BOUNDARIES:
                raise DomainError(f"unknown boundary condition {b!r}", "bc")

    @classmethod
    def for_scenario(cls, scenario: Scenario, n, bc="periodic"):
        d = scenario.dimension
        dims = tuple(int(k) for k in np.broadcast_to(np.asarray(n, int), (d,)))
        boundary = (bc,) * d if isinstance(bc, str) else tuple(bc)
        return cls(dims, tuple(map(float, scenario.lower)), tuple(map(float, scenario.upper)), boundary)

    @property
    def d(self):
        return len(self.dims)

    @property
    def N(self):
        return int(np.prod(self.dims))

    @property
    def shape(self):
        return tuple(self.dims)

    @property
    def periodic_axes(self):
        return tuple(j for j, b in enumerate(self.boundary) if b == "periodic")

    @property
    def extent(self):
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def spacing(self):
        n = np.asarray(self.dims, float)
        per = np.array([b == "periodic" for b in self.boundary])
        return self.extent / np.where(per, n, n + 1)

    @property
    def axes(self):
        out = []
        for j, (a, n, dx) in enumerate(zip(self.lower, self.dims, self.spacing)):
            start = a if self.boundary[j] == "periodic" else a + dx
            out.append(start + dx * np.arange(n))
        return out

    @property
    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))


@dataclass
class DiscreteHamiltonian:
    matrix: sp.csr_matrix
    scenario: Scenario
    mu: float
    h: float
    lattice: Lattice
    warnings: list = field(default_factory=list)

    @property
    def N(self):
        return self.matrix.shape[0]

    @property
    def norm(self):
        """Max absolute row sum, an upper bound for the spectral norm."""
        return float(np.abs(self.matrix).sum(axis=1).max())

    def dense(self):
        return self.matrix.toarray()

    def hermiticity_residual(self):
        diff = self.matrix - self.matrix.conj().T
        return float(np.abs(diff).max()) if diff.nnz else 0.0


def _link_hops(lattice: Lattice, axis, phases, wrap_phases):
    """Phase factor of the link leaving each node along ``axis``.

    On periodic axes the wrap link also carries the magnetic translation
    phase; on Dirichlet axes the last link (into the ghost node) is zero.
    """
    last = np.zeros(lattice.shape, bool)
    sl = [slice(None)] * lattice.d
    sl[axis] = -1
    last[tuple(sl)] = True
    hop = np.exp(-1j * phases)
    if lattice.boundary[axis] == "periodic":
        return np.where(last, hop * np.exp(1j * wrap_phases), hop)
    return np.where(last, 0.0, hop)


def _differences(lattice: Lattice, axis, hop):
    """Forward ``(hop u(m + e) - u(m)) / dx`` and backward ``(u(m) - conj(hop) u(m - e)) / dx``."""
    N = lattice.N
    dx = lattice.spacing[axis]
    idx = np.arange(N).reshape(lattice.shape)
    nxt = np.roll(idx, -1, axis=axis).ravel()
    prev = np.roll(idx, 1, axis=axis).ravel()
    hop = hop.ravel()
    hop_in = hop[prev]  # link m - e -> m
    diag = sp.diags(np.full(N, 1.0 / dx, complex))
    Dp = sp.csr_matrix((hop / dx, (idx.ravel(), nxt)), shape=(N, N)) - diag
    Dm = diag - sp.csr_matrix((np.conj(hop_in) / dx, (idx.ravel(), prev)), shape=(N, N))
    Dp.eliminate_zeros()
    Dm.eliminate_zeros()
    return Dp.tocsr(), Dm.tocsr()


def _quasi_periodic_shift(scenario: Scenario, lattice: Lattice, axis, samples=7):
    """Constant vector ``a`` with ``V(x + L e_axis) = V(x) + a`` (checked on sample points)."""
    rng = np.random.default_rng(12345 + axis)
    lo, hi = np.asarray(lattice.lower), np.asarray(lattice.upper)
    X = lo + rng.random((samples, lattice.d)) * (hi - lo)
    step = np.zeros(lattice.d)
    step[axis] = lattice.extent[axis]
    diff = np.asarray(scenario.vector_potential(X + step)) - np.asarray(scenario.vector_potential(X))
    a = diff[0]
    scale = max(np.abs(diff).max(), np.abs(np.asarray(scenario.vector_potential(X))).max(), 1.0)
    if np.abs(diff - a).max() > 1e-10 * scale:
        raise FieldError(
            f"vector potential is not quasi-periodic along periodic axis {axis}; use a gauge with constant jumps",
            "bc",
        )
    return a


def assemble(scenario: Scenario, mu, h, lattice: Lattice, resolution_c=1.0) -> DiscreteHamiltonian:
    """Second-order Peierls discretisation ``h^2 sum (D_j)^* g^{jk} D_k + V``.

    Diagonal metric entries are sampled at link midpoints, off-diagonal ones
    at nodes and averaged over forward and backward mixed differences.
    Periodic wraps use the magnetic translation phase ``exp(i mu a.x / h)``.
    """
    if h <= 0 or mu < 0:
        raise DomainError("need h > 0 and mu >= 0", "mu")
    d = scenario.dimension
    if lattice.d != d:
        raise DomainError(f"lattice dimension {lattice.d} differs from scenario dimension {d}", "lattice")
    if not np.allclose(lattice.lower, scenario.lower) or not np.allclose(lattice.upper, scenario.upper):
        raise DomainError("lattice box must match the scenario domain", "lattice")
    dx = lattice.spacing
    X = lattice.points
    warn = []

    # flux and aliasing checks use the intensity at the nodes
    F = scenario.intensity(X)
    for j in range(d):
        for k in range(j + 1, d):
            plaquette = np.abs(mu * F[:, j, k] * dx[j] * dx[k] / h).max()
            if plaquette >= math.pi:
                raise AliasingError(
                    f"plaquette flux {plaquette:.3f} >= pi in plane ({j}, {k}); refine the lattice", "n"
                )
            if lattice.boundary[j] == lattice.boundary[k] == "periodic" and scenario.constant_field:
                flux = mu * F[0, j, k] * lattice.extent[j] * lattice.extent[k] / (2 * math.pi * h)
                if abs(flux - round(flux)) > 1e-8 * max(1.0, abs(flux)):
                    raise FluxQuantizationError(
                        f"flux {flux:.10g} through periodic plane ({j}, {k}) is not an integer", "bc"
                    )
    if mu > 0:
        g0 = np.asarray(scenario.metric(X))
        f = frequencies_batch(g0, F)
        fmax = float(f.max()) if f.size else 0.0
        if fmax > 0:
            ell = math.sqrt(h / (mu * fmax))
            if dx.max() > resolution_c * ell:
                warn.append(f"spacing {dx.max():.4g} exceeds the magnetic length {ell:.4g}")

    N = lattice.N
    H = sp.csr_matrix((N, N), dtype=complex)
    fwd, bwd = [], []
    for j in range(d):
        e = np.zeros(d)
        e[j] = dx[j]
        mid = X + e / 2
        Vbar = np.asarray(scenario.vector_potential(mid))[:, j]
        phases = (mu * dx[j] / h) * Vbar
        wrap = np.zeros(N)
        if lattice.boundary[j] == "periodic" and mu != 0:
            a = _quasi_periodic_shift(scenario, lattice, j)
            target = X + e - lattice.extent[j] * np.eye(d)[j]
            wrap = (mu / h) * target @ a
        Dp, Dm = _differences(lattice, j, _link_hops(lattice, j, phases.reshape(lattice.shape), wrap.reshape(lattice.shape)))
        fwd.append(Dp)
        bwd.append(Dm)
        gjj = np.asarray(scenario.metric(mid))[:, j, j]
        H = H + Dp.conj().T @ sp.diags(gjj) @ Dp
        if lattice.boundary[j] == "dirichlet":
            # link from the ghost node below the first interior node
            first = (np.arange(N).reshape(lattice.shape).take(0, axis=j)).ravel()
            g_in = np.asarray(scenario.metric(X[first] - e / 2))[:, j, j]
            H = H + sp.csr_matrix((g_in / dx[j] ** 2, (first, first)), shape=(N, N))

    gnode = np.asarray(scenario.metric(X))
    off = np.abs(gnode - np.einsum("...jj->...j", gnode)[..., None] * np.eye(d)).max() if d > 1 else 0.0
    if off > 0:
        for j in range(d):
            for k in range(d):
                if j == k:
                    continue
                G = sp.diags(gnode[:, j, k])
                H = H + 0.5 * (fwd[j].conj().T @ G @ fwd[k] + bwd[j].conj().T @ G @ bwd[k])

    H = h * h * H + sp.diags(np.asarray(scenario.scalar_potential(X), float).astype(complex))
    H = (0.5 * (H + H.conj().T)).tocsr()
    H.sum_duplicates()
    H.eliminate_zeros()
    for msg in warn:
        _warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return DiscreteHamiltonian(H, scenario, float(mu), float(h), lattice, warn)


# -- Bloch reduction along a translation-invariant periodic axis ----------------

def _axis_permutation(lattice: Lattice, axis):
    idx = np.arange(lattice.N).reshape(lattice.shape)
    return np.moveaxis(idx, axis, 0).reshape(lattice.dims[axis], -1)


def bloch_axis(H: DiscreteHamiltonian, tol=1e-13):
    """A periodic axis along which ``H`` commutes with the plain lattice shift, or ``None``."""
    lat = H.lattice
    best = None
    for j in lat.periodic_axes:
        idx = np.arange(lat.N).reshape(lat.shape)
        s = np.roll(idx, -1, axis=j).ravel()
        M = H.matrix
        diff = M[s][:, s] - M
        if diff.nnz == 0 or np.abs(diff).max() <= tol * H.norm:
            if best is None or lat.dims[j] > lat.dims[best]:
                best = j
    return best


def bloch_blocks(H: DiscreteHamiltonian, axis):
    """Dense blocks ``H_k = sum_s B_s exp(2 pi i k s / n)``, ``k = 0..n-1``."""
    P = _axis_permutation(H.lattice, axis)
    n, m = P.shape
    M = H.matrix.tocsr()
    row0 = M[P[0]]
    blocks = np.zeros((n, m, m), complex)
    phase = np.exp(2j * np.pi * np.arange(n) / n)
    for s in range(n):
        B = row0[:, P[s]]
        if B.nnz == 0:
            continue
        Bd = B.toarray()
        blocks += Bd[None] * (phase**s)[:, None, None]
    blocks = 0.5 * (blocks + np.conj(np.swapaxes(blocks, 1, 2)))
    return blocks


# -- dense spectra ---------------------------------------------------------------

def spectrum(H: DiscreteHamiltonian, dense_budget=DENSE_BUDGET):
    """All eigenvalues in ascending order (Bloch-reduced when possible)."""
    axis = bloch_axis(H)
    if axis is not None:
        blocks = bloch_blocks(H, axis)
        return np.sort(np.concatenate([sla.eigvalsh(b) for b in blocks]))
    if H.N > dense_budget:
        raise BudgetError(f"dense eigensolve of N={H.N} exceeds the budget {dense_budget}", "n")
    return sla.eigvalsh(H.dense())


def _check_hermitian(H):
    res = H.hermiticity_residual()
    if res > 1e-12 * H.norm:
        raise FactorizationError(f"operator is not Hermitian (residual {res:.3e})")


@dataclass(frozen=True)
class CountResult:
    count: int
    method: str
    N: int
    tau: float
    jitter: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "count": self.count,
            "N": self.N,
            "method": self.method,
            "tau": self.tau,
            "jitter": self.jitter,
            "diagnostics": self.diagnostics,
        }


# -- banded LDL^T inertia ----------------------------------------------------------

@numba.njit(cache=True)
def _banded_ldl_negatives(band, b, tiny):
    """Unpivoted ``L D L^T`` on lower band storage ``band[i, b + j - i] = A[i, j]``.

    Overwrites ``band`` with ``L``.  Returns ``(negatives, min |pivot|, status)``
    where ``status`` is the failing row or ``-1``.
    """
    N = band.shape[0]
    D = np.empty(N)
    neg = 0
    minpiv = np.inf
    for j in range(N):
        k0 = max(0, j - b)
        s = band[j, b]
        for k in range(k0, j):
            l = band[j, b + k - j]
            s -= l * l * D[k]
        if abs(s) <= tiny:
            return neg, 0.0, j
        D[j] = s
        if s < 0:
            neg += 1
        if abs(s) < minpiv:
            minpiv = abs(s)
        for i in range(j + 1, min(N, j + b + 1)):
            t = band[i, b + j - i]
            kk = max(k0, i - b)
            for k in range(kk, j):
                t -= band[i, b + k - i] * band[j, b + k - j] * D[k]
            band[i, b + j - i] = t / s
    return neg, minpiv, -1


def _band_order(lattice: Lattice):
    """Node ordering: lexicographic, folded ``0, n-1, 1, n-2, ...`` on periodic axes."""
    per_axis = []
    for n, bc in zip(lattice.dims, lattice.boundary):
        if bc == "periodic":
            fold = np.empty(n, int)
            fold[0::2] = np.arange((n + 1) // 2)
            fold[1::2] = n - 1 - np.arange(n // 2)
            per_axis.append(fold)
        else:
            per_axis.append(np.arange(n))
    idx = np.arange(lattice.N).reshape(lattice.shape)
    return idx[np.ix_(*per_axis)].ravel()


def real_embedding(M, order=None):
    """Interleaved real symmetric embedding of a Hermitian sparse matrix."""
    M = sp.coo_matrix(M if order is None else M.tocsr()[order][:, order])
    re, im = M.data.real, M.data.imag
    i, j = M.row, M.col
    rows = np.concatenate([2 * i, 2 * i, 2 * i + 1, 2 * i + 1])
    cols = np.concatenate([2 * j, 2 * j + 1, 2 * j, 2 * j + 1])
    vals = np.concatenate([re, -im, im, re])
    n = 2 * M.shape[0]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _inertia_count(H: DiscreteHamiltonian, tau, budget):
    order = _band_order(H.lattice)
    E = real_embedding(H.matrix, order).tocoo()
    n = E.shape[0]
    lower = E.row >= E.col
    r, c, v = E.row[lower], E.col[lower], E.data[lower]
    b = int((r - c).max()) if r.size else 0
    if n * (b + 1) ** 2 > budget:
        raise BudgetError(f"banded factorisation of size {n}, bandwidth {b} exceeds the budget", "n")
    band = np.zeros((n, b + 1))
    np.add.at(band, (r, b + c - r), v)
    band[:, b] -= tau
    tiny = 1e-14 * max(H.norm, abs(tau), 1.0)
    neg, minpiv, status = _banded_ldl_negatives(band, b, tiny)
    if status >= 0:
        raise FactorizationError(f"zero pivot at row {status} of the shifted embedding")
    if neg % 2:
        raise FactorizationError(f"odd negative-pivot count {neg} in the real embedding")
    return neg // 2, {"bandwidth": b, "min_abs_pivot": minpiv, "embedding_size": n}


def count_below(H: DiscreteHamiltonian, tau, method="auto", dense_budget=DENSE_BUDGET, budget=INERTIA_BUDGET):
    """``#{lambda <= tau}`` by dense eigensolve or by inertia of ``H - tau``.

    ``method="auto"`` uses dense eigenvalues (Bloch-reduced when ``H`` is
    translation invariant along a periodic axis) up to ``dense_budget`` and
    inertia counting beyond.  A singular shift is retried at
    ``tau + 1e-10 ||H||``; the jitter is reported.
    """
    if method not in ("auto", "dense", "inertia"):
        raise DomainError(f"unknown count method {method!r}", "method")
    _check_hermitian(H)
    tau = float(tau)
    if method == "auto":
        method = "dense" if H.N <= dense_budget or bloch_axis(H) is not None else "inertia"
    if method == "dense":
        axis = bloch_axis(H)
        ev = spectrum(H, dense_budget)
        diag = {"min_eigenvalue": float(ev[0]), "max_eigenvalue": float(ev[-1])}
        if axis is not None:
            diag["bloch_axis"] = axis
        return CountResult(int(np.count_nonzero(ev <= tau)), "dense", H.N, tau, 0.0, diag)
    jitter = 0.0
    try:
        count, diag = _inertia_count(H, tau, budget)
    except FactorizationError as exc:
        if "odd" in str(exc):
            raise
        jitter = 1e-10 * H.norm
        count, diag = _inertia_count(H, tau + jitter, budget)
    return CountResult(int(count), "inertia", H.N, tau, jitter, diag)


# -- local traces --------------------------------------------------------------------

def local_trace(H: DiscreteHamiltonian, tau, psi, dense_budget=DENSE_BUDGET):
    """``sum_{lambda_k <= tau} sum_n psi(x_n) |u_k(n)|^2`` over unit-normalised eigenvectors.

    Uses Bloch reduction along a translation-invariant periodic axis when one
    exists; there ``psi`` is averaged along that axis, which is exact.
    """
    lat = H.lattice
    w = np.asarray(psi(lat.points), float)
    axis = bloch_axis(H)
    if axis is not None:
        P = _axis_permutation(lat, axis)
        wbar = w[P].mean(axis=0)
        total = 0.0
        for block in bloch_blocks(H, axis):
            lam, U = sla.eigh(block)
            sel = lam <= tau
            if sel.any():
                total += float(wbar @ (np.abs(U[:, sel]) ** 2).sum(axis=1))
        return total
    if H.N > dense_budget:
        raise BudgetError(f"local trace needs a dense eigensolve of N={H.N} > {dense_budget}", "n")
    lam, U = sla.eigh(H.dense())
    sel = lam <= tau
    return float(w @ (np.abs(U[:, sel]) ** 2).sum(axis=1))


# -- clusters ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Cluster:
    center: float
    width: float
    multiplicity: int
    lo: float
    hi: float


def clusters(eigenvalues, split):
    """Group sorted eigenvalues into clusters separated by gaps larger than ``split``."""
    ev = np.sort(np.asarray(eigenvalues, float))
    if ev.size == 0:
        return []
    cuts = np.nonzero(np.diff(ev) > split)[0] + 1
    out = []
    for part in np.split(ev, cuts):
        out.append(Cluster(float(part.mean()), float(part[-1] - part[0]), int(part.size), float(part[0]), float(part[-1])))
    return out


def landau_clusters(eigenvalues, levels, multiplicities=None):
    """Assign each eigenvalue below the midpoint above the last level to its nearest level."""
    levels = np.asarray(levels, float)
    ev = np.sort(np.asarray(eigenvalues, float))
    if levels.size > 1:
        top = levels[-1] + 0.5 * (levels[-1] - levels[-2])
    else:
        top = np.inf
    ev = ev[ev < top]
    nearest = np.abs(ev[:, None] - levels[None, :]).argmin(axis=1)
    out = []
    for k in range(levels.size):
        part = ev[nearest == k]
        if part.size == 0:
            out.append(Cluster(float("nan"), float("nan"), 0, float("nan"), float("nan")))
        else:
            out.append(Cluster(float(part.mean()), float(part[-1] - part[0]), int(part.size), float(part[0]), float(part[-1])))
    return out


def require_resolved(cluster_list, min_gap):
    for c in cluster_list:
        if c.multiplicity and c.width > 0.5 * min_gap:
            raise ResolutionError(
                f"cluster near {c.center:.6g} has width {c.width:.3g} > half the level gap {min_gap:.3g}", "n"
            )
