"""Built-in scenario registry and the TOML run-configuration loader.

Every registry entry supplies exact derivatives of its fields, so the
intensity matrices of registry scenarios carry no finite-difference error.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .geometry import Scenario

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

CONFIG_VERSION = 1

# side length of const2d: mu/h = 256 (mu=8, h=1/32) gives 12 flux quanta
CONST2D_SIDE = math.sqrt(3 * math.pi / 32)


def _eye_metric(d):
    def metric(X):
        X = np.asarray(X, float)
        return np.broadcast_to(np.eye(d), X.shape[:-1] + (d, d)).copy()

    return metric


def _linear_field(A, c=None):
    """Vector potential ``V(x) = A x + c`` with its constant Jacobian."""
    A = np.asarray(A, float)
    d = A.shape[0]
    c = np.zeros(d) if c is None else np.asarray(c, float)

    def vp(X):
        return np.asarray(X, float) @ A.T + c

    def jac(X):
        X = np.asarray(X, float)
        return np.broadcast_to(A, X.shape[:-1] + (d, d)).copy()

    return vp, jac


def _quadratic_potential(v0, grad, curv):
    grad = np.asarray(grad, float)

    def V(X):
        X = np.asarray(X, float)
        return v0 + X @ grad + 0.5 * curv * np.sum(X * X, axis=-1)

    def dV(X):
        X = np.asarray(X, float)
        return grad + curv * X

    return V, dV


def const2d(B=1.0, V0=-1.0, L=CONST2D_SIDE, gx=0.0, gy=0.0, curv=0.0, x0=0.0):
    """Constant field ``B`` in Landau gauge ``(0, B x_1)`` on ``[x0, x0 + L]^2``.

    The scalar potential is ``V0 + gx x1 + gy x2 + curv |x|^2 / 2``; the
    defaults give the constant ``V = -1`` used by the exactness tests.
    """
    A = np.zeros((2, 2))
    A[1, 0] = B
    vp, jac = _linear_field(A)
    V, dV = _quadratic_potential(V0, (gx, gy), curv)
    constant_V = gx == 0 and gy == 0 and curv == 0
    return Scenario(
        name="const2d",
        dimension=2,
        lower=(x0, x0),
        upper=(x0 + L, x0 + L),
        metric=_eye_metric(2),
        vector_potential=vp,
        scalar_potential=V,
        potential_jacobian=jac,
        potential_gradient=dV,
        constant_field=True,
        analytic={"frequencies": (abs(B),), "V": V0 if constant_V else None},
        params=dict(B=B, V0=V0, L=L, gx=gx, gy=gy, curv=curv, x0=x0),
    )


def _const4d(name, f1, f2, V0, sides):
    A = np.zeros((4, 4))
    A[1, 0] = f1
    A[3, 2] = f2
    vp, jac = _linear_field(A)
    V, dV = _quadratic_potential(V0, np.zeros(4), 0.0)
    return Scenario(
        name=name,
        dimension=4,
        lower=(0.0,) * 4,
        upper=tuple(float(s) for s in sides),
        metric=_eye_metric(4),
        vector_potential=vp,
        scalar_potential=V,
        potential_jacobian=jac,
        potential_gradient=dV,
        constant_field=True,
        analytic={"frequencies": tuple(sorted((abs(f1), abs(f2)), reverse=True)), "V": V0},
        params=dict(f1=f1, f2=f2, V0=V0, sides=tuple(sides)),
    )


def const4d(f1=1.0, f2=math.sqrt(2.0), V0=-1.0, sides=None):
    """Two decoupled constant-field planes ``(x1, x2)`` and ``(x3, x4)``.

    Default sides give fluxes ``(3, 2)`` at ``mu / h = 6 pi``.
    """
    if sides is None:
        b = math.sqrt(2.0 / (3.0 * f2))
        sides = (1.0, 1.0, b, b)
    return _const4d("const4d", f1, f2, V0, sides)


def resonant4d(f1=1.0, f2=2.0, V0=-1.0, sides=None):
    """Resonant pair ``f = (1, 2)``; default sides give fluxes ``(3, 2)`` at ``mu / h = 6 pi``."""
    if sides is None:
        b = math.sqrt(2.0 / (3.0 * f2))
        sides = (1.0, 1.0, b, b)
    return _const4d("resonant4d", f1, f2, V0, sides)


def var2d(B=1.0, V0=-1.0, slope=0.3, L1=1.0, L2=1.0):
    """Constant field with ``V = V0 + slope * x2`` on ``[0, L1] x [0, L2]``.

    The gauge ``(-B x2, 0)`` does not depend on ``x1``, so the lattice
    operator is translation invariant along a periodic ``x1`` axis.
    """
    A = np.zeros((2, 2))
    A[0, 1] = -B
    vp, jac = _linear_field(A)
    V, dV = _quadratic_potential(V0, (0.0, slope), 0.0)
    return Scenario(
        name="var2d",
        dimension=2,
        lower=(0.0, 0.0),
        upper=(L1, L2),
        metric=_eye_metric(2),
        vector_potential=vp,
        scalar_potential=V,
        potential_jacobian=jac,
        potential_gradient=dV,
        constant_field=True,
        analytic={"frequencies": (abs(B),), "V": None},
        params=dict(B=B, V0=V0, slope=slope, L1=L1, L2=L2),
    )


REGISTRY = {
    "const2d": const2d,
    "const4d": const4d,
    "var2d": var2d,
    "resonant4d": resonant4d,
}


def get_scenario(name, **overrides):
    """Build a registry scenario, rejecting unknown parameter names."""
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(REGISTRY)}", "scenario") from None
    allowed = factory.__code__.co_varnames[: factory.__code__.co_argcount]
    for key in overrides:
        if key not in allowed:
            raise ConfigError(f"scenario {name!r} has no parameter {key!r}", f"scenario.params.{key}")
    return factory(**overrides)


def linear_transform(scenario: Scenario, Q, lower, upper, name=None):
    """Pull a scenario back along ``x = Q y`` onto the box ``[lower, upper]``.

    Inverse metric ``Q^{-1} g Q^{-T}``, covector potential ``Q^T V(Q y)``.
    Used to produce scrambled coordinates with metric cross terms.
    """
    Q = np.asarray(Q, float)
    Qi = np.linalg.inv(Q)

    def metric(Y):
        return Qi @ np.asarray(scenario.metric(np.asarray(Y) @ Q.T)) @ Qi.T

    def vp(Y):
        return np.asarray(scenario.vector_potential(np.asarray(Y) @ Q.T)) @ Q

    def jac(Y):
        return Q.T @ scenario.vector_potential_jacobian(np.asarray(Y) @ Q.T) @ Q

    def V(Y):
        return scenario.scalar_potential(np.asarray(Y) @ Q.T)

    def dV(Y):
        return scenario.potential_grad(np.asarray(Y) @ Q.T) @ Q

    return Scenario(
        name=name or f"{scenario.name}-transformed",
        dimension=scenario.dimension,
        lower=tuple(lower),
        upper=tuple(upper),
        metric=metric,
        vector_potential=vp,
        scalar_potential=V,
        potential_jacobian=jac,
        potential_gradient=dV,
        constant_field=scenario.constant_field,
        analytic=scenario.analytic,
        params=dict(scenario.params, transform=Q.tolist()),
    )


def torus_sides(frequencies, fluxes, mu, h):
    """Square plane sides giving integer flux ``fluxes[p]`` through plane ``p``."""
    sides = []
    for f, n in zip(frequencies, fluxes):
        s = math.sqrt(2 * math.pi * h * n / (mu * f))
        sides += [s, s]
    return tuple(sides)


# -- configuration files --------------------------------------------------------

def load_config(path):
    """Read a versioned TOML run configuration."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found", "config") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", "config") from None
    version = data.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {version!r}", "version")
    return data


def check_keys(section, allowed, prefix):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", f"{prefix}.{key}" if prefix else key)


def scenario_from_config(section):
    """``[scenario]`` section: ``name`` plus an optional ``[scenario.params]`` table."""
    check_keys(section, {"name", "params"}, "scenario")
    if "name" not in section:
        raise ConfigError("scenario.name is required", "scenario.name")
    params = dict(section.get("params", {}))
    for key, value in params.items():
        if isinstance(value, list):
            params[key] = tuple(value)
    return get_scenario(section["name"], **params)
