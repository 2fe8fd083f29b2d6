import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from magweyl.errors import DomainError, FieldError, ResolutionError
from magweyl.geometry import Scenario
from magweyl.oracle import Lattice, assemble
from magweyl.reduction import magnetic_symbol, reduce_constant, symplectic_form, verify_reduction_isospectral
from magweyl.scenarios import const2d, const4d, linear_transform, resonant4d, var2d


def quadratic_parts(g, J, c0, mu):
    """Old symbol as z^T A z + b.z + c with z = (x, xi): independent of sampling."""
    d = g.shape[0]
    # p = xi - mu J x - mu c0 = P z - mu c0
    P = np.hstack([-mu * J, np.eye(d)])
    A = P.T @ g @ P
    b = -2 * mu * P.T @ g @ c0
    c = mu * mu * c0 @ g @ c0
    return A, b, c


def scrambled(rng, base=None):
    base = base or resonant4d()
    Q = np.eye(4) + 0.4 * rng.standard_normal((4, 4))
    return linear_transform(base, Q, (-0.2,) * 4, (0.2,) * 4)


def test_const2d_pipeline():
    pipe, red = reduce_constant(const2d(), 8.0)
    np.testing.assert_allclose(pipe.step1_Q, np.eye(2))
    np.testing.assert_allclose(red.frequencies, [1.0])
    assert red.potential_constant == -1.0
    assert red.residual <= 1e-10
    assert pipe.symplectic_residual() <= 1e-12


def test_four_dimensional_frequencies():
    pipe, red = reduce_constant(resonant4d(), 2.0)
    np.testing.assert_allclose(red.frequencies, [2.0, 1.0])
    assert "h^2 D_1^2" in red.oscillator_part


@pytest.mark.parametrize("mu", [1.0, 3.7, 25.0])
def test_quadratic_form_identity(rng, mu):
    sc = scrambled(rng)
    pipe, red = reduce_constant(sc, mu)
    T, c = pipe.composite()
    g = np.asarray(sc.metric(np.zeros((1, 4))))[0]
    J = sc.vector_potential_jacobian(np.zeros((1, 4)))[0]
    c0 = np.asarray(sc.vector_potential(np.zeros((1, 4))))[0]
    A, b, c00 = quadratic_parts(g, J, c0, mu)
    f = red.frequencies
    # the second half of y and eta drops out of the oscillator symbol
    z = np.zeros(4 - len(f))
    target = np.diag(np.concatenate([mu * mu * f, z, f, z]))
    # substituting z = T w + c: quadratic part T^T A T, linear part T^T (2 A c + b)
    scale = np.abs(target).max()
    np.testing.assert_allclose(T.T @ A @ T, target, atol=1e-9 * scale)
    np.testing.assert_allclose(T.T @ (2 * A @ c + b), 0.0, atol=1e-9 * scale)
    assert c @ A @ c + b @ c + c00 == pytest.approx(0.0, abs=1e-9 * scale)


@given(st.integers(0, 2**31 - 1), st.floats(1.0, 50.0))
def test_random_pipelines_symplectic(seed, mu):
    # round-off grows like cond(Q)^2; nearly singular scrambles are out of scope
    assume(np.linalg.cond(np.eye(4) + 0.4 * np.random.default_rng(seed).standard_normal((4, 4))) < 100)
    sc = scrambled(np.random.default_rng(seed))
    pipe, red = reduce_constant(sc, mu)
    T, _ = pipe.composite()
    Om = symplectic_form(4)
    assert np.abs(T.T @ Om @ T - Om).max() <= 1e-12 * max(1.0, np.abs(T).max() ** 2)
    for step in pipe.steps:
        M = step.matrix
        assert np.abs(M.T @ Om @ M - Om).max() <= 1e-12 * max(1.0, np.abs(M).max() ** 2)
    assert red.residual <= 1e-10


def test_symbol_residual_on_samples(rng):
    sc = const4d()
    pipe, red = reduce_constant(sc, 4.0, samples=100, seed=3)
    T, c = pipe.composite()
    Z = rng.standard_normal((100, 8))
    old = magnetic_symbol(np.eye(4), sc.vector_potential_jacobian(np.zeros((1, 4)))[0], np.zeros(4), 4.0, Z @ T.T + c)
    assert np.abs(old - red.symbol(Z)).max() <= 1e-10 * np.abs(old).max()


def test_pipeline_json():
    pipe, red = reduce_constant(const2d(), 2.0)
    d = pipe.to_dict()
    assert [s["name"] for s in d["steps"]] == ["change_of_variables", "gauge", "partial_fourier", "shear", "rescale"]
    assert set(red.to_dict()) == {"frequencies", "oscillator_part", "potential_substitution", "symbol_residual"}


def test_rejects_variable_field():
    sc = const2d()
    bent = Scenario(**{**sc.__dict__, "vector_potential": lambda X: np.stack([0 * X[..., 0], X[..., 0] ** 2], -1),
                       "potential_jacobian": None})
    with pytest.raises(FieldError):
        reduce_constant(bent, 1.0)
    with pytest.raises(DomainError):
        reduce_constant(sc, 0.0)


# -- isospectral check ----------------------------------------------------------------


def _iso(n, V0=-1.0):
    sc = const2d(V0=V0)
    _, red = reduce_constant(sc, 8.0)
    H = assemble(sc, 8.0, 1 / 32, Lattice.for_scenario(sc, n, "periodic"))
    return verify_reduction_isospectral(red, H, 3)


def test_isospectral_clusters():
    rep = _iso(48)
    assert rep.multiplicities == [12, 12, 12]
    np.testing.assert_allclose(rep.levels, [-0.75, -0.25, 0.25])
    assert rep.max_deviation < 0.05


def test_isospectral_second_order():
    coarse, fine = _iso(24), _iso(48)
    ratio = np.abs(coarse.deviations) / np.abs(fine.deviations)
    slopes = np.log2(ratio)
    assert slopes.min() >= 1.8


def test_potential_shift_shifts_clusters():
    a, b = _iso(24), _iso(24, V0=-0.8)
    np.testing.assert_allclose(np.array(b.centers) - np.array(a.centers), 0.2, atol=1e-12)


def test_four_dimensional_ground_cluster():
    h = 0.1
    mu = 6 * math.pi * h
    sc = resonant4d()
    _, red = reduce_constant(sc, mu)
    H = assemble(sc, mu, h, Lattice.for_scenario(sc, (8, 8, 6, 6), "periodic"))
    rep = verify_reduction_isospectral(red, H, 1)
    assert rep.levels[0] == pytest.approx(3 * mu * h - 1)
    assert rep.multiplicities == [6]


def test_unresolved_raises():
    sc = const2d()
    _, red = reduce_constant(sc, 8.0)
    with pytest.warns(RuntimeWarning):
        H = assemble(sc, 8.0, 1 / 32, Lattice.for_scenario(sc, 8, "periodic"))
    with pytest.raises(ResolutionError):
        verify_reduction_isospectral(red, H, 3)


def test_isospectral_needs_constant_potential():
    sc = var2d()
    _, red = reduce_constant(sc, 2.0)
    H = assemble(sc, 2.0, 0.25, Lattice.for_scenario(sc, 8, "dirichlet"))
    with pytest.raises(DomainError):
        verify_reduction_isospectral(red, H, 2)
