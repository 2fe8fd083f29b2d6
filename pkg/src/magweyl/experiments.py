"""Remainder-scaling sweeps, fits and degeneracy checks against the lattice oracle.

A sweep point compares the lattice count ``sum_{lambda <= tau} <psi u, u>``
with the integrated magnetic Weyl density ``int E^MW(x, tau) psi(x) dx``.
Sweeps are deterministic: the same :class:`SweepSpec` gives bit-identical
CSV output whatever the number of workers.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, MagweylError, ResolutionError
from .geometry import Scenario, frequencies_batch
from .oracle import (
    DENSE_BUDGET,
    Lattice,
    assemble,
    bloch_axis,
    count_below,
    landau_clusters,
    local_trace,
    spectrum,
)
from .resonance import check_gap_condition, check_microhyp_constant
from .scenarios import get_scenario
from .weyl import CutoffFunction, WeylDensity, WeylParams, distinct_levels, integrate_density

REGIME_KAPPA = {"weak": 0.4, "intermediate": 0.5, "strong": 0.75, "superstrong": 1.0}
REGIMES = tuple(REGIME_KAPPA) + ("gap",)


@dataclass(frozen=True)
class SweepSpec:
    """One remainder sweep.

    ``mu = c * h^(-kappa)``; for ``regime="gap"`` instead ``mu = mu_h / h``.
    Lattice points per axis ``n_j = ceil(points_per_wavelength * L_j / h)``.
    """

    scenario: str
    psi: CutoffFunction
    regime: str
    h_list: tuple
    scenario_params: dict = field(default_factory=dict)
    c: float = 1.0
    kappa: float | None = None
    mu_h: float | None = None
    points_per_wavelength: float = 10.0
    tau: float = 0.0
    bc: tuple = ("periodic", "dirichlet")
    quad_n: tuple | int = 256
    eps1: float = 0.05
    threshold_eps: float = 1.0
    dense_budget: int = DENSE_BUDGET

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; choose from {REGIMES}", "sweep.regime")
        if self.regime == "gap" and self.mu_h is None:
            raise ConfigError("the gap regime needs mu_h", "sweep.mu_h")
        hs = tuple(float(h) for h in self.h_list)
        if any(not (0 < h <= 1) for h in hs):
            raise ConfigError("every h must lie in (0, 1]", "sweep.h_list")
        if len(set(hs)) != len(hs):
            raise ConfigError("h_list has duplicates", "sweep.h_list")
        object.__setattr__(self, "h_list", tuple(sorted(hs, reverse=True)))
        if self.points_per_wavelength <= 0:
            raise ConfigError("points_per_wavelength must be positive", "sweep.points_per_wavelength")

    @property
    def exponent(self):
        return REGIME_KAPPA.get(self.regime) if self.kappa is None else self.kappa

    def mu_of(self, h):
        if self.regime == "gap":
            return self.mu_h / h
        return self.c * h ** (-self.exponent)

    def build_scenario(self) -> Scenario:
        return get_scenario(self.scenario, **self.scenario_params)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["psi"] = dataclasses.asdict(self.psi)
        return _plain(out)

    def run_id(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


RECORD_FIELDS = (
    "h",
    "mu",
    "kappa",
    "mu_h",
    "n",
    "N",
    "N_numeric",
    "principal",
    "R",
    "relative",
    "quad_error",
    "method",
    "mu1_star",
    "mu2_star",
    "condition_margin",
    "flags",
)


@dataclass(frozen=True)
class RemainderRecord:
    h: float
    mu: float
    kappa: float
    mu_h: float
    n: int
    N: int
    N_numeric: float
    principal: float
    R: float
    relative: float
    quad_error: float
    method: str
    mu1_star: float
    mu2_star: float
    condition_margin: float
    flags: str = ""

    @property
    def fatal(self):
        return "fatal" in self.flags.split(";")

    @property
    def flagged(self):
        return bool(self.flags)

    def row(self):
        return [getattr(self, k) for k in RECORD_FIELDS]


def regime_thresholds(h, eps=1.0):
    """``(mu_1*, mu_2*) = (eps h^-1/2 |log h|^-1/2, eps h^-1 |log h|^-1)``; infinite at ``h = 1``."""
    lg = abs(math.log(h))
    if lg == 0:
        return math.inf, math.inf
    return eps * h**-0.5 * lg**-0.5, eps / (h * lg)


def _support_grid(scenario, psi, per_axis=9):
    lo, hi = psi.bounds(scenario)
    lo = np.maximum(lo, scenario.lower)
    hi = np.minimum(hi, scenario.upper)
    axes = [np.linspace(a, b, per_axis + 2)[1:-1] for a, b in zip(lo, hi)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, scenario.dimension)
    return X[psi(X) > 0]


def _condition(spec, scenario, mu, h, X):
    if spec.regime == "gap":
        return check_gap_condition(scenario, mu, h, spec.eps1, X, spec.tau)
    variant = {"weak": "weak", "intermediate": "weak", "strong": "strong", "superstrong": "superstrong"}[spec.regime]
    alpha_bar = np.zeros(len(scenario.analytic["frequencies"])) if variant == "superstrong" else None
    return check_microhyp_constant(scenario, variant, spec.eps1, X, mu=mu, h=h, alpha_bar=alpha_bar, tau=spec.tau)


def _density_kind(scenario, X):
    f = frequencies_batch(np.asarray(scenario.metric(X)), scenario.intensity(X))
    return "full_rank" if np.all(f > 0) else "general"


def run_point(spec: SweepSpec, h) -> RemainderRecord:
    """One sweep point; computation errors become a record flagged ``fatal``."""
    scenario = spec.build_scenario()
    mu = spec.mu_of(h)
    mu1, mu2 = regime_thresholds(h, spec.threshold_eps)
    n_rule = math.ceil(spec.points_per_wavelength / h - 1e-9)
    kappa = float(spec.exponent if spec.regime != "gap" else 1.0)
    flags = []
    try:
        if mu < 1:
            raise DomainError(f"mu = {mu:.4g} < 1 at h = {h}", "sweep.c")
        params = WeylParams(mu, h, spec.tau)
        X = _support_grid(scenario, spec.psi)
        cond = _condition(spec, scenario, mu, h, X)
        if not cond.satisfied:
            flags.append("condition_unmet")
        dims = [max(4, math.ceil(spec.points_per_wavelength * L / h - 1e-9)) for L in scenario.extent]
        bc = tuple(spec.bc) if len(spec.bc) == scenario.dimension else (spec.bc[0],) * scenario.dimension
        lat = Lattice(tuple(dims), tuple(scenario.lower), tuple(scenario.upper), bc)
        spec.psi.validate(scenario, lat.periodic_axes)
        H = assemble(scenario, mu, h, lat)
        if H.warnings:
            flags.append("under_resolved")
        psi, integ_scenario = spec.psi, scenario
        if H.N <= spec.dense_budget or bloch_axis(H) is not None:
            numeric = local_trace(H, spec.tau, psi, spec.dense_budget)
            method = "local_trace"
            N = H.N
        else:
            numeric, N, psi, integ_scenario = _subbox_count(spec, scenario, mu, h, dims)
            method = "subbox_count"
            flags.append("boundary_layer")
        density = WeylDensity(integ_scenario, params, _density_kind(integ_scenario, X))
        quad = integrate_density(density, psi, n=spec.quad_n)
        principal = quad.value
        R = abs(numeric - principal)
        relative = R / principal if principal > 0 else math.inf
        if quad.quad_error_estimate > 0.1 * R:
            flags.append("quad_error")
        margin = cond.margin
    except MagweylError as exc:
        flags.append("fatal")
        flags.append(type(exc).__name__)
        nan = math.nan
        return RemainderRecord(h, mu, kappa, mu * h, n_rule, 0, nan, nan, nan, nan, nan, "none", mu1, mu2, nan, ";".join(flags))
    return RemainderRecord(
        float(h),
        float(mu),
        kappa,
        float(mu * h),
        int(n_rule),
        int(N),
        float(numeric),
        float(principal),
        float(R),
        float(relative),
        float(quad.quad_error_estimate),
        method,
        float(mu1),
        float(mu2),
        float(margin),
        ";".join(flags),
    )


def _subbox_count(spec, scenario, mu, h, dims):
    """Dirichlet count on the support box of ``psi`` with ``psi`` replaced by its indicator."""
    lo, hi = spec.psi.bounds(scenario)
    sub = dataclasses.replace(scenario, lower=tuple(map(float, lo)), upper=tuple(map(float, hi)))
    bc = []
    sub_dims = []
    for j, n in enumerate(dims):
        full = np.isclose(lo[j], scenario.lower[j]) and np.isclose(hi[j], scenario.upper[j])
        bc.append(spec.bc[j] if full and len(spec.bc) > j else "dirichlet")
        sub_dims.append(max(4, math.ceil(n * (hi[j] - lo[j]) / scenario.extent[j])))
    lat = Lattice(tuple(sub_dims), sub.lower, sub.upper, tuple(bc))
    H = assemble(sub, mu, h, lat)
    res = count_below(H, spec.tau, "inertia")
    return float(res.count), H.N, CutoffFunction.indicator(lo, hi), sub


def worker_count(workers=None):
    env = os.environ.get("MAGWEYL_WORKERS")
    if env:
        try:
            workers = int(env)
        except ValueError:
            raise ConfigError(f"MAGWEYL_WORKERS must be an integer, got {env!r}", "MAGWEYL_WORKERS") from None
    workers = 1 if workers is None else int(workers)
    if workers < 1:
        raise ConfigError("worker count must be >= 1", "workers")
    return workers


def run_remainder_sweep(spec: SweepSpec, workers=None):
    """Records in ``h``-descending order; independent points run concurrently."""
    workers = worker_count(workers)
    hs = list(spec.h_list)
    if workers == 1 or len(hs) == 1:
        return [run_point(spec, h) for h in hs]
    with ProcessPoolExecutor(max_workers=min(workers, len(hs))) as pool:
        return list(pool.map(run_point, [spec] * len(hs), hs))


# -- fits -----------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    residual: float
    predicted_exponent: float | None
    points: int
    skipped: int = 0

    def to_dict(self):
        return _plain(dataclasses.asdict(self))


def predicted_exponent(d, kappa):
    """Exponent of ``mu^-1 h^(1-d)`` in ``1/h`` along ``mu ~ h^-kappa``."""
    return d - 1 - kappa


def fit_scaling(records, predicted=None):
    """Least squares of ``log R`` against ``log(1/h)`` over unflagged records with ``R > 0``."""
    usable = [r for r in records if not r.fatal and math.isfinite(r.R)]
    pos = [r for r in usable if r.R > 0]
    skipped = len(records) - len(pos)
    if len(pos) < 3:
        raise DomainError(f"fit needs at least 3 records with R > 0, got {len(pos)}", "records")
    x = np.log(1.0 / np.array([r.h for r in pos]))
    y = np.log(np.array([r.R for r in pos]))
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return FitResult(float(coef[0]), float(coef[1]), resid, predicted, len(pos), skipped)


def monotone_inversions(values):
    """Number of increases in a sequence expected to decrease."""
    v = np.asarray(values, float)
    return int(np.sum(np.diff(v) > 0))


# -- degeneracy ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DegeneracyReport:
    levels: list
    measured: list
    expected: list
    exact: bool
    max_abs_diff: float

    def to_dict(self):
        return _plain(dataclasses.asdict(self))


def degeneracy_test(scenario: Scenario, mu, h, lattice: Lattice, levels=3, tolerance=None):
    """Cluster multiplicities against ``(2 pi)^-r (mu/h)^r f_1..f_r vol`` per alpha.

    ``tolerance`` defaults to 0 in two dimensions and 1 otherwise.
    """
    if set(lattice.boundary) != {"periodic"}:
        raise DomainError("degeneracy test needs periodic boundary conditions", "bc")
    f = np.asarray(scenario.analytic["frequencies"], float)
    V = scenario.analytic.get("V")
    if V is None:
        raise DomainError("degeneracy test needs a constant scalar potential", "V")
    r = len(f)
    per_alpha = (2 * math.pi) ** (-r) * (mu / h) ** r * np.prod(f) * scenario.volume
    cap = f.sum() + 2 * f.max() * (levels + 1)
    table = distinct_levels(f, cap)
    while len(table) < levels + 1:
        cap *= 2
        table = distinct_levels(f, cap)
    table = table[: levels + 1]
    energies = np.array([e * mu * h + V for e, _ in table])
    H = assemble(scenario, mu, h, lattice)
    found = landau_clusters(spectrum(H), energies)[:levels]
    gap = float(np.diff(energies).min())
    for c in found:
        if c.multiplicity == 0 or c.width > 0.5 * gap:
            raise ResolutionError(f"Landau cluster near {c.center:.5g} is not resolved", "n")
    measured = [c.multiplicity for c in found]
    expected = [per_alpha * m for _, m in table[:levels]]
    diff = float(np.max(np.abs(np.array(measured) - np.array(expected))))
    tol = (0.0 if scenario.dimension == 2 else 1.0) if tolerance is None else tolerance
    return DegeneracyReport(energies[:levels].tolist(), measured, expected, bool(diff <= tol + 1e-9), diff)


# -- persistence ----------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records_csv(records, path):
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_FIELDS)
            for r in records:
                w.writerow([_fmt(v) for v in r.row()])
    except OSError as exc:
        raise MagweylError(f"cannot write {path}: {exc}", "out") from None


def read_records_csv(path):
    types = {f.name: f.type for f in dataclasses.fields(RemainderRecord)}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            vals = {}
            for k, v in row.items():
                t = types[k]
                vals[k] = float(v) if t == "float" else int(v) if t == "int" else v
            out.append(RemainderRecord(**vals))
    return out


def records_to_json(records, spec=None, fits=None, wall_time=None):
    payload = {
        "records": [dict(zip(RECORD_FIELDS, r.row())) for r in records],
    }
    if spec is not None:
        payload["scenario"] = spec.scenario
        payload["spec"] = spec.to_dict()
        payload["run_id"] = spec.run_id()
    if fits is not None:
        payload["fits"] = {k: v.to_dict() for k, v in fits.items()}
    if wall_time is not None:
        payload["wall_time_s"] = wall_time
    return json.dumps(_plain(payload), indent=2, sort_keys=True, allow_nan=True)


def records_from_json(text):
    data = json.loads(text)
    out = []
    for row in data["records"]:
        vals = {k: (math.nan if v is None else v) for k, v in row.items()}
        out.append(RemainderRecord(**vals))
    return out


def write_plotdata(records, directory):
    """Two-column ``.dat`` files: ``log(1/h)`` against ``log R`` and ``R / principal``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    curves = {
        "logR_vs_log_inv_h.dat": [(math.log(1 / r.h), math.log(r.R)) for r in records if r.R > 0 and not r.fatal],
        "relative_vs_h.dat": [(r.h, r.relative) for r in records if not r.fatal],
    }
    for name, pts in curves.items():
        with open(directory / name, "w", encoding="utf-8") as fh:
            for a, b in pts:
                fh.write(f"{a!r} {b!r}\n")
    return sorted(curves)


def persist(records, out_dir, spec=None, fits=None, wall_time=None):
    """Write ``records.csv``, ``records.json``, ``fits.json`` and ``plotdata/*.dat``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_records_csv(records, out / "records.csv")
        (out / "records.json").write_text(records_to_json(records, spec, fits, wall_time), encoding="utf-8")
        (out / "fits.json").write_text(
            json.dumps({k: v.to_dict() for k, v in (fits or {}).items()}, indent=2, sort_keys=True), encoding="utf-8"
        )
        write_plotdata(records, out / "plotdata")
    except OSError as exc:
        raise MagweylError(f"cannot write results to {out}: {exc}", "out") from None
    return out


def timed_sweep(spec: SweepSpec, workers=None):
    t0 = time.perf_counter()
    records = run_remainder_sweep(spec, workers)
    return records, time.perf_counter() - t0
