"""Linear symplectic reduction of a constant-field magnetic symbol to oscillators.

The quadratic symbol ``sum g^{jk} (xi_j - mu V_j)(xi_k - mu V_k)`` with
constant ``g`` and linear ``V`` is mapped to ``sum_j f_j (eta_j^2 + mu^2 y_j^2)``
by five affine symplectic steps, each written as
``old phase point = M_i @ new phase point + c_i``:

1. linear change of variables ``x = Q y`` bringing ``g`` to the identity and
   ``F`` to canonical blocks;
2. gauge transformation moving the vector potential to ``V_{j+r} = f_j y_j``;
3. partial Fourier transform in the second half of the variables;
4. shear ``z' = w' + f^{-1} w''`` removing the cross term;
5. diagonal rescaling to the normalisation ``f_j (h^2 D_j^2 + mu^2 x_j^2)``.

The quantum counterparts are metaplectic operators; only their symbols are
used, and unitary equivalence is checked spectrally against the oracle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FieldError, ResolutionError
from .geometry import Scenario, field_intensity, symplectic_frame
from .oracle import DiscreteHamiltonian, landau_clusters, spectrum
from .weyl import distinct_levels


def symplectic_form(d):
    Z, I = np.zeros((d, d)), np.eye(d)
    return np.block([[Z, I], [-I, Z]])


@dataclass(frozen=True)
class PipelineStep:
    name: str
    matrix: np.ndarray
    shift: np.ndarray


@dataclass(frozen=True)
class MetaplecticPipeline:
    """Composite affine map ``old = T @ new + c`` on ``R^{2d}``."""

    steps: tuple
    frequencies: np.ndarray
    mu: float

    @property
    def dimension(self):
        return self.steps[0].matrix.shape[0] // 2

    @property
    def step1_Q(self):
        d = self.dimension
        return self.steps[0].matrix[:d, :d]

    @property
    def step2_S(self):
        d = self.dimension
        return self.steps[1].matrix[d:, :d] / self.mu

    @property
    def step4_K(self):
        d = self.dimension
        return self.steps[3].matrix[:d, :d]

    def composite(self):
        d2 = 2 * self.dimension
        T, c = np.eye(d2), np.zeros(d2)
        for step in self.steps:
            c = T @ step.shift + c
            T = T @ step.matrix
        return T, c

    def symplectic_residual(self):
        T, _ = self.composite()
        Om = symplectic_form(self.dimension)
        return float(np.abs(T.T @ Om @ T - Om).max())

    def to_dict(self):
        T, c = self.composite()
        return {
            "frequencies": self.frequencies.tolist(),
            "steps": [{"name": s.name, "matrix": s.matrix.tolist(), "shift": s.shift.tolist()} for s in self.steps],
            "composite": T.tolist(),
            "composite_shift": c.tolist(),
            "symplectic_residual": self.symplectic_residual(),
        }


@dataclass(frozen=True)
class ReducedForm:
    """``sum_j f_j (h^2 D_j^2 + mu^2 y_j^2) + V(x(y, eta))`` with ``x`` affine."""

    frequencies: np.ndarray
    substitution: np.ndarray  # (d, 2d): old x = substitution @ (y, eta) + offset
    offset: np.ndarray
    mu: float
    residual: float = 0.0
    potential_constant: float | None = None

    @property
    def oscillator_part(self):
        terms = " + ".join(f"{f:.12g}*(h^2 D_{j + 1}^2 + mu^2 x_{j + 1}^2)" for j, f in enumerate(self.frequencies))
        return terms

    def symbol(self, Z):
        Z = np.atleast_2d(Z)
        r = len(self.frequencies)
        d = Z.shape[1] // 2
        y, eta = Z[:, :r], Z[:, d : d + r]
        return (self.frequencies * (eta**2 + self.mu**2 * y**2)).sum(axis=1)

    def to_dict(self):
        return {
            "frequencies": self.frequencies.tolist(),
            "oscillator_part": self.oscillator_part,
            "potential_substitution": {"matrix": self.substitution.tolist(), "offset": self.offset.tolist()},
            "symbol_residual": self.residual,
        }


def magnetic_symbol(g, J, c0, mu, Z):
    """``sum g^{jk} (xi_j - mu V_j)(xi_k - mu V_k)`` with ``V(x) = J x + c0`` at rows of ``Z``."""
    d = g.shape[0]
    x, xi = Z[:, :d], Z[:, d:]
    p = xi - mu * (x @ J.T + c0)
    return np.einsum("nj,jk,nk->n", p, g, p)


def _constant_data(scenario: Scenario, samples=5, rtol=1e-10):
    X = scenario.grid(samples)
    g = np.asarray(scenario.metric(X))
    J = scenario.vector_potential_jacobian(X)
    scale = max(np.abs(J).max(), 1.0)
    if np.abs(g - g[0]).max() > rtol * np.abs(g).max():
        raise FieldError("reduction needs a constant metric", "metric")
    if np.abs(J - J[0]).max() > 1e-8 * scale:
        raise FieldError("reduction needs a linear vector potential (constant field)", "vector_potential")
    J0 = J[0]
    Vx = np.asarray(scenario.vector_potential(X))
    c0 = Vx - X @ J0.T
    if np.abs(c0 - c0[0]).max() > 1e-8 * max(np.abs(Vx).max(), 1.0):
        raise FieldError("vector potential is not affine", "vector_potential")
    return g[0], J0, c0[0]


def reduce_constant(scenario: Scenario, mu, samples=100, seed=0, tol=1e-10):
    """Build the five-step pipeline for a constant-field scenario.

    Returns ``(pipeline, reduced)``.  The symbol identity is verified on
    ``samples`` points drawn uniformly from the unit ball of ``R^{2d}``; a
    relative residual above ``tol`` raises.
    """
    if mu <= 0:
        raise DomainError("mu must be positive", "mu")
    g, J, c0 = _constant_data(scenario)
    d = scenario.dimension
    F = J.T - J
    frame = symplectic_frame(field_intensity(g, 0.5 * (F - F.T)))
    f = frame.frequencies
    r = len(f)
    Q = frame.basis
    I = np.eye(d)
    Z = np.zeros((d, d))

    # (i) x = Q y, xi = Q^{-T} eta
    M1 = np.block([[Q, Z], [Z, np.linalg.inv(Q).T]])
    # (ii) eta -> eta + mu (S y + s): new potential minus target Landau gauge
    A1 = Q.T @ J @ Q
    s = Q.T @ c0
    T_target = np.zeros((d, d))
    T_target[np.arange(r) + r, np.arange(r)] = f
    S = A1 - T_target
    S = 0.5 * (S + S.T)
    M2 = np.block([[I, Z], [mu * S, I]])
    c2 = np.concatenate([np.zeros(d), mu * s])
    # (iii) partial Fourier in the second half: y'' = -zeta''/mu, eta'' = mu z''
    M3 = np.zeros((2 * d, 2 * d))
    for j in range(r):
        M3[j, j] = 1.0  # y' = z'
        M3[d + j, d + j] = 1.0  # eta' = zeta'
        M3[r + j, d + r + j] = -1.0 / mu  # y'' = -zeta''/mu
        M3[d + r + j, r + j] = mu  # eta'' = mu z''
    # (iv) shear z' = w' + f^{-1} w'', zeta = L^{-T} omega
    L = np.eye(d)
    L[np.arange(r), np.arange(r) + r] = 1.0 / f
    M4 = np.block([[L, Z], [Z, np.linalg.inv(L).T]])
    # (v) w' = y / sqrt(f), omega' = sqrt(f) eta
    scale = np.ones(2 * d)
    scale[:r] = 1 / np.sqrt(f)
    scale[d : d + r] = np.sqrt(f)
    M5 = np.diag(scale)

    zero = np.zeros(2 * d)
    steps = (
        PipelineStep("change_of_variables", M1, zero),
        PipelineStep("gauge", M2, c2),
        PipelineStep("partial_fourier", M3, zero),
        PipelineStep("shear", M4, zero),
        PipelineStep("rescale", M5, zero),
    )
    pipe = MetaplecticPipeline(steps, f, float(mu))
    T, c = pipe.composite()

    rng = np.random.default_rng(seed)
    P = rng.standard_normal((samples, 2 * d))
    P *= (rng.random(samples) ** (1 / (2 * d)) / np.linalg.norm(P, axis=1))[:, None]
    old = magnetic_symbol(g, J, c0, mu, P @ T.T + c)
    red = ReducedForm(f, T[:d], c[:d], float(mu))
    new = red.symbol(P)
    residual = float(np.abs(old - new).max() / max(np.abs(new).max(), np.abs(old).max(), 1e-300))
    if residual > tol:
        raise FieldError(f"symbol reduction residual {residual:.3e} exceeds {tol:g}")
    sres = pipe.symplectic_residual()
    if sres > 1e-12 * max(1.0, np.abs(T).max() ** 2):
        raise FieldError(f"pipeline is not symplectic (residual {sres:.3e})")
    V = scenario.analytic.get("V") if scenario.analytic else None
    return pipe, ReducedForm(f, T[:d], c[:d], float(mu), residual, V)


@dataclass(frozen=True)
class IsospectralReport:
    levels: list
    centers: list
    deviations: list
    widths: list
    multiplicities: list
    spacing: float

    @property
    def max_deviation(self):
        return float(np.max(np.abs(self.deviations)))

    def to_dict(self):
        return {
            "levels": self.levels,
            "centers": self.centers,
            "deviations": self.deviations,
            "widths": self.widths,
            "multiplicities": self.multiplicities,
            "spacing": self.spacing,
        }


def verify_reduction_isospectral(reduced: ReducedForm, H: DiscreteHamiltonian, k, V=None):
    """Compare the ``k`` lowest eigenvalue clusters of ``H`` with ``E_alpha mu h + V``.

    ``V`` defaults to the constant potential recorded on the reduced form.
    Raises :class:`ResolutionError` when a cluster is wider than half the
    smallest level gap.
    """
    V = reduced.potential_constant if V is None else V
    if V is None:
        raise DomainError("isospectral check needs a constant scalar potential", "V")
    f = np.asarray(reduced.frequencies)
    mh = H.mu * H.h
    cap = f.sum() + 2 * f.max() * (k + 1)
    levels = [e * mh + V for e, _ in distinct_levels(f, cap)]
    while len(levels) < k + 1:
        cap *= 2
        levels = [e * mh + V for e, _ in distinct_levels(f, cap)]
    levels = np.array(levels[: k + 1])
    ev = spectrum(H)
    found = landau_clusters(ev, levels)[:k]
    gap = float(np.diff(levels).min())
    widths = [c.width for c in found]
    if any(c.multiplicity == 0 for c in found):
        raise ResolutionError("a Landau level has no eigenvalue cluster near it", "n")
    if max(widths) > 0.5 * gap:
        raise ResolutionError(f"cluster width {max(widths):.3g} exceeds half the level gap {gap:.3g}", "n")
    centers = [c.center for c in found]
    return IsospectralReport(
        levels=levels[:k].tolist(),
        centers=centers,
        deviations=(np.array(centers) - levels[:k]).tolist(),
        widths=widths,
        multiplicities=[c.multiplicity for c in found],
        spacing=float(H.lattice.spacing.max()),
    )
