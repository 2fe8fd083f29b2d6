import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from magweyl.errors import AliasingError, BudgetError, DomainError, FluxQuantizationError
from magweyl.geometry import Scenario
from magweyl.oracle import (
    DiscreteHamiltonian,
    Lattice,
    assemble,
    bloch_axis,
    clusters,
    count_below,
    landau_clusters,
    local_trace,
    real_embedding,
    spectrum,
)
from magweyl.scenarios import const2d, const4d, get_scenario, resonant4d, var2d
from magweyl.weyl import CutoffFunction


def metric2d(X):
    X = np.asarray(X, float)
    g = np.empty(X.shape[:-1] + (2, 2))
    g[..., 0, 0] = 1 + 0.2 * X[..., 0]
    g[..., 1, 1] = 1.3 + 0.1 * np.sin(X[..., 1])
    g[..., 0, 1] = g[..., 1, 0] = 0.1 + 0.05 * X[..., 1]
    return g


def curved(vp=None):
    return Scenario(
        name="curved",
        dimension=2,
        lower=(0.0, 0.0),
        upper=(1.0, 1.5),
        metric=metric2d,
        vector_potential=vp or (lambda X: np.zeros(np.shape(X))),
        scalar_potential=lambda X: 0.5 * X[..., 0] - X[..., 1] ** 2,
    )


def free1d(n=8):
    return Scenario(
        name="free1d",
        dimension=1,
        lower=(0.0,),
        upper=(1.0,),
        metric=lambda X: np.ones(np.shape(X)[:-1] + (1, 1)),
        vector_potential=lambda X: np.zeros(np.shape(X)),
        scalar_potential=lambda X: np.zeros(np.shape(X)[:-1]),
    )


def loop_assembler(sc, h, lat):
    """Scalar (mu = 0) operator built node by node from explicit stencils."""
    d, dims, dx = lat.d, lat.dims, lat.spacing
    axes = lat.axes
    nodes = list(itertools.product(*[range(n) for n in dims]))
    index = {m: i for i, m in enumerate(nodes)}
    H = np.zeros((len(nodes), len(nodes)))

    def x_of(m):
        return np.array([axes[j][m[j]] for j in range(d)])

    def neighbour(m, j, step):
        k = list(m)
        k[j] += step
        if 0 <= k[j] < dims[j]:
            return index[tuple(k)]
        if lat.boundary[j] == "periodic":
            k[j] %= dims[j]
            return index[tuple(k)]
        return None  # ghost node, u = 0

    def stencil(m, j, step):
        # forward: (u(m+e) - u(m)) / dx; backward: (u(m) - u(m-e)) / dx
        i, nb = index[m], neighbour(m, j, step)
        out = [(i, -1.0 / dx[j] if step > 0 else 1.0 / dx[j])]
        if nb is not None:
            out.append((nb, 1.0 / dx[j] if step > 0 else -1.0 / dx[j]))
        return out

    for m in nodes:
        i = index[m]
        x = x_of(m)
        H[i, i] += sc.scalar_potential(x[None])[0]
        g = sc.metric(x[None])[0]
        for j in range(d):
            e = np.eye(d)[j] * dx[j]
            w = h * h * sc.metric((x + e / 2)[None])[0][j, j] / dx[j] ** 2
            nb = neighbour(m, j, +1)
            H[i, i] += w
            if nb is not None:
                H[nb, nb] += w
                H[i, nb] -= w
                H[nb, i] -= w
            if lat.boundary[j] == "dirichlet" and m[j] == 0:
                H[i, i] += h * h * sc.metric((x - e / 2)[None])[0][j, j] / dx[j] ** 2
        for j, k in itertools.permutations(range(d), 2):
            for step in (+1, -1):
                for p, a in stencil(m, j, step):
                    for q, b in stencil(m, k, step):
                        H[p, q] += 0.5 * h * h * g[j, k] * a * b
    return H


# -- lattice ----------------------------------------------------------------------------


def test_lattice_spacing_and_points():
    lat = Lattice((4, 5), (0.0, 0.0), (1.0, 1.0), ("periodic", "dirichlet"))
    np.testing.assert_allclose(lat.spacing, [0.25, 1 / 6])
    assert lat.points.shape == (20, 2)
    assert lat.points[0].tolist() == [0.0, 1 / 6]
    assert lat.periodic_axes == (0,)
    with pytest.raises(DomainError):
        Lattice((3,), (0.0,), (1.0,), ("periodic",))
    with pytest.raises(DomainError):
        Lattice((4,), (0.0,), (1.0,), ("open",))


# -- assembly ----------------------------------------------------------------------------


@pytest.mark.parametrize("bc", [("dirichlet", "dirichlet"), ("periodic", "dirichlet"), ("periodic", "periodic")])
def test_scalar_operator_matches_loop_assembler(bc):
    sc = curved()
    h = 0.3
    lat = Lattice.for_scenario(sc, (5, 6), bc)
    H = assemble(sc, 0.0, h, lat)
    ref = loop_assembler(sc, h, lat)
    dense = H.dense()
    assert np.abs(dense.imag).max() == 0.0
    np.testing.assert_allclose(dense.real, ref, atol=1e-12)


def test_free_1d_dirichlet_spectrum():
    n, h = 8, 0.1
    lat = Lattice.for_scenario(free1d(), n, "dirichlet")
    ev = spectrum(assemble(free1d(), 0.0, h, lat))
    dx = lat.spacing[0]
    k = np.arange(1, n + 1)
    ref = 4 * h * h / dx**2 * np.sin(np.pi * k / (2 * (n + 1))) ** 2
    np.testing.assert_allclose(ev, ref, rtol=1e-10)


def test_free_1d_periodic_spectrum():
    n, h = 12, 0.2
    lat = Lattice.for_scenario(free1d(), n, "periodic")
    ev = spectrum(assemble(free1d(), 0.0, h, lat))
    dx = lat.spacing[0]
    ref = np.sort(4 * h * h / dx**2 * np.sin(np.pi * np.arange(n) / n) ** 2)
    np.testing.assert_allclose(ev, ref, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize(
    "name, n, mu, h",
    [("const2d", 24, 8.0, 1 / 32), ("var2d", 16, 2.0, 0.25), ("resonant4d", (4, 4, 4, 4), 6 * math.pi * 0.1, 0.1)],
)
def test_hermitian(name, n, mu, h):
    sc = get_scenario(name)
    bc = ("periodic", "dirichlet") if name == "var2d" else "periodic"
    H = assemble(sc, mu, h, Lattice.for_scenario(sc, n, bc))
    assert H.hermiticity_residual() == 0.0


def test_curved_magnetic_hermitian():
    vp = lambda X: np.stack([-0.5 * X[..., 1] ** 2, X[..., 0]], axis=-1)
    sc = curved(vp)
    H = assemble(sc, 3.0, 0.2, Lattice.for_scenario(sc, (6, 7), "dirichlet"))
    assert H.hermiticity_residual() == 0.0
    assert np.abs(H.dense().imag).max() > 0


@pytest.mark.parametrize("axis, k", [(0, 1), (1, 2), (1, -3)])
def test_gauge_shift_invariance(axis, k):
    mu, h = 8.0, 1 / 32
    base = const2d()
    L = base.extent[axis]
    c = 2 * math.pi * h * k / (mu * L)
    shift = np.eye(2)[axis] * c
    shifted = Scenario(**{**base.__dict__, "vector_potential": lambda X: base.vector_potential(X) + shift})
    lat = Lattice.for_scenario(base, 24, "periodic")
    e0 = spectrum(assemble(base, mu, h, lat))
    e1 = np.linalg.eigvalsh(assemble(shifted, mu, h, lat).dense())
    assert np.abs(e1 - e0).max() <= 1e-10 * np.abs(e0).max()


def test_dirichlet_gauge_shift_any_constant():
    sc = var2d()
    shifted = Scenario(**{**sc.__dict__, "vector_potential": lambda X: sc.vector_potential(X) + np.array([0.37, -1.1])})
    lat = Lattice.for_scenario(sc, 10, "dirichlet")
    e0 = spectrum(assemble(sc, 2.0, 0.2, lat))
    e1 = spectrum(assemble(shifted, 2.0, 0.2, lat))
    assert np.abs(e1 - e0).max() <= 1e-10 * np.abs(e0).max()


def test_potential_shift_moves_spectrum():
    a = spectrum(assemble(const2d(), 8.0, 1 / 32, Lattice.for_scenario(const2d(), 16, "periodic")))
    sc = const2d(V0=-0.25)
    b = spectrum(assemble(sc, 8.0, 1 / 32, Lattice.for_scenario(sc, 16, "periodic")))
    np.testing.assert_allclose(b - a, 0.75, atol=1e-12)


def test_landau_degeneracy_equals_flux():
    sc = const2d()
    H = assemble(sc, 8.0, 1 / 32, Lattice.for_scenario(sc, 48, "periodic"))
    found = landau_clusters(spectrum(H), [-0.75, -0.25, 0.25])
    assert [c.multiplicity for c in found] == [12, 12, 12]


def test_flux_quantization_error():
    sc = const2d()
    with pytest.raises(FluxQuantizationError):
        assemble(sc, 8.0, 0.03, Lattice.for_scenario(sc, 24, "periodic"))
    # Dirichlet boundaries impose no quantisation
    assemble(sc, 8.0, 0.03, Lattice.for_scenario(sc, 24, "dirichlet"))


def test_aliasing_and_resolution_warning():
    sc = const2d()
    with pytest.raises(AliasingError):
        assemble(sc, 64.0, 1 / 32, Lattice.for_scenario(sc, 4, "dirichlet"))
    with pytest.warns(RuntimeWarning, match="magnetic length"):
        H = assemble(sc, 8.0, 1 / 32, Lattice.for_scenario(sc, 8, "periodic"))
    assert H.warnings


def test_non_quasiperiodic_gauge_rejected():
    sc = const2d()
    bad = Scenario(**{**sc.__dict__, "vector_potential": lambda X: np.stack([0 * X[..., 0], X[..., 0] + X[..., 1] ** 2], -1)})
    with pytest.raises(Exception) as err:
        assemble(bad, 1.0, 0.5, Lattice.for_scenario(sc, 8, ("dirichlet", "periodic")))
    assert "quasi-periodic" in str(err.value)


# -- counting ----------------------------------------------------------------------------


def _plain(matrix, n):
    lat = Lattice((n,), (0.0,), (1.0,), ("dirichlet",))
    return DiscreteHamiltonian(sp.csr_matrix(matrix, dtype=complex), free1d(), 0.0, 1.0, lat)


def test_identity_count():
    H = _plain(np.eye(4), 4)
    assert count_below(H, 0.0, "dense").count == 0
    assert count_below(H, 0.0, "inertia").count == 0


def test_free_1d_count_both_methods():
    lat = Lattice.for_scenario(free1d(), 8, "dirichlet")
    H = assemble(free1d(), 0.0, 0.1, lat)
    ev = spectrum(H)
    tau = 0.5 * (ev[2] + ev[3])
    assert count_below(H, tau, "dense").count == 3
    assert count_below(H, tau, "inertia").count == 3


def test_zero_pivot_jitter():
    H = _plain(np.diag([1.0, 2.0, 3.0, 4.0]), 4)
    res = count_below(H, 1.0, "inertia")
    assert res.count == 1 and res.jitter > 0
    assert count_below(H, 1.0, "dense").count == 1


def test_landau_count_mid_gap():
    sc = const2d()
    H = assemble(sc, 8.0, 1 / 32, Lattice.for_scenario(sc, 48, "periodic"))
    for tau, want in [(-0.5, 12), (0.0, 24)]:
        assert count_below(H, tau, "dense").count == want
        assert count_below(H, tau, "inertia").count == want


FIXTURES = [
    ("const2d", 24, 8.0, 1 / 32, "periodic"),
    ("const2d", 20, 8.0, 1 / 32, "dirichlet"),
    ("var2d", 16, 2.0, 0.25, ("periodic", "dirichlet")),
    ("var2d", 12, 3.0, 0.2, "dirichlet"),
    ("const4d", (5, 5, 4, 4), 6 * math.pi * 0.1, 0.1, "periodic"),
    ("resonant4d", (6, 6, 4, 4), 6 * math.pi * 0.1, 0.1, "periodic"),
]


@pytest.mark.parametrize("name, n, mu, h, bc", FIXTURES)
def test_dense_and_inertia_agree(name, n, mu, h, bc):
    sc = get_scenario(name)
    H = assemble(sc, mu, h, Lattice.for_scenario(sc, n, bc))
    ev = spectrum(H)
    gaps = np.diff(ev)
    picks = np.argsort(gaps)[::-1][:5]
    for i in picks:
        tau = 0.5 * (ev[i] + ev[i + 1])
        assert count_below(H, tau, "dense").count == count_below(H, tau, "inertia").count == i + 1


@given(st.integers(0, 2**31 - 1))
def test_real_embedding_doubles_spectrum(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    A = A + A.conj().T
    E = real_embedding(sp.csr_matrix(A)).toarray()
    np.testing.assert_allclose(E, E.T)
    ev = np.linalg.eigvalsh(A)
    np.testing.assert_allclose(np.linalg.eigvalsh(E), np.sort(np.repeat(ev, 2)), atol=1e-10)


def test_count_budget_and_method():
    H = _plain(np.eye(4), 4)
    with pytest.raises(DomainError):
        count_below(H, 0.0, "cholesky")
    with pytest.raises(BudgetError):
        count_below(H, 0.0, "inertia", budget=1)


def test_count_result_dict():
    d = count_below(_plain(np.eye(4), 4), 2.0, "inertia").to_dict()
    assert d["count"] == 4 and d["method"] == "inertia"


# -- Bloch reduction and local traces -----------------------------------------------------


def test_bloch_spectrum_matches_dense():
    sc = var2d()
    H = assemble(sc, 2.0, 0.25, Lattice.for_scenario(sc, 16, ("periodic", "dirichlet")))
    assert bloch_axis(H) == 0
    np.testing.assert_allclose(spectrum(H), np.linalg.eigvalsh(H.dense()), atol=1e-11)


def test_no_bloch_axis_for_dirichlet():
    sc = var2d()
    H = assemble(sc, 2.0, 0.25, Lattice.for_scenario(sc, 8, "dirichlet"))
    assert bloch_axis(H) is None


def _dense_trace(H, tau, psi):
    lam, U = np.linalg.eigh(H.dense())
    w = psi(H.lattice.points)
    return float(w @ (np.abs(U[:, lam <= tau]) ** 2).sum(axis=1))


def test_local_trace_full_cutoff_is_count():
    sc = const2d()
    H = assemble(sc, 8.0, 1 / 32, Lattice.for_scenario(sc, 24, "periodic"))
    one = CutoffFunction.indicator(sc.lower, sc.upper)
    assert local_trace(H, -0.5, one) == pytest.approx(12.0, abs=1e-10)
    assert local_trace(H, -5.0, one) == 0.0


def test_local_trace_half_torus():
    sc = const2d()
    H = assemble(sc, 8.0, 1 / 32, Lattice.for_scenario(sc, 24, "periodic"))
    L = sc.extent[0]
    half = CutoffFunction.indicator((0.0, 0.0), (L / 2 - 1e-9, L))
    assert local_trace(H, -0.5, half) == pytest.approx(6.0, rel=0.05)


def test_local_trace_bloch_matches_dense():
    sc = var2d()
    H = assemble(sc, 2.0, 0.25, Lattice.for_scenario(sc, 12, ("periodic", "dirichlet")))
    psi = CutoffFunction.bump((0.5, 0.5), (math.inf, 0.35))
    assert local_trace(H, 0.0, psi) == pytest.approx(_dense_trace(H, 0.0, psi), rel=1e-10)
    H4 = assemble(sc, 2.0, 0.25, Lattice.for_scenario(sc, 8, "dirichlet"))
    assert local_trace(H4, 0.0, psi) == pytest.approx(_dense_trace(H4, 0.0, psi), rel=1e-12)


# -- clusters ------------------------------------------------------------------------------


def test_clusters_split():
    found = clusters([0.0, 0.01, 1.0, 1.02, 1.01, 3.0], 0.5)
    assert [c.multiplicity for c in found] == [2, 3, 1]
    assert found[1].width == pytest.approx(0.02)
