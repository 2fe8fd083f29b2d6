import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magweyl.errors import ConfigError, DomainError, ResolutionError
from magweyl.experiments import (
    RECORD_FIELDS,
    RemainderRecord,
    SweepSpec,
    degeneracy_test,
    fit_scaling,
    monotone_inversions,
    persist,
    predicted_exponent,
    read_records_csv,
    records_from_json,
    records_to_json,
    regime_thresholds,
    run_point,
    run_remainder_sweep,
    worker_count,
    write_records_csv,
)
from magweyl.oracle import Lattice
from magweyl.scenarios import const2d, resonant4d
from magweyl.weyl import CutoffFunction


def synthetic(hs, R_of):
    out = []
    for h in hs:
        R = R_of(h)
        out.append(RemainderRecord(h, 1 / h, 1.0, 1.0, 8, 64, 10.0 + R, 10.0, R, R / 10, 0.0, "synthetic", 1.0, 2.0, 0.1))
    return out


HS = (1 / 8, 1 / 12, 1 / 16, 1 / 24, 1 / 32)


def constant_spec(**kw):
    args = dict(
        scenario="const2d",
        psi=CutoffFunction.indicator(const2d().lower, const2d().upper),
        regime="gap",
        h_list=(1 / 16, 1 / 32),
        mu_h=0.25,
        tau=-0.5,
        points_per_wavelength=2,  # spacing still 4x below the magnetic length
        bc=("periodic", "periodic"),
        quad_n=8,
    )
    args.update(kw)
    return SweepSpec(**args)


# -- spec ----------------------------------------------------------------------------


def test_spec_orders_and_validates():
    spec = constant_spec(h_list=(1 / 32, 1 / 16))
    assert spec.h_list == (1 / 16, 1 / 32)
    assert spec.mu_of(1 / 32) == pytest.approx(8.0)
    with pytest.raises(ConfigError):
        constant_spec(regime="medium")
    with pytest.raises(ConfigError):
        constant_spec(mu_h=None)
    with pytest.raises(ConfigError):
        constant_spec(h_list=(0.5, 0.5))
    with pytest.raises(ConfigError):
        constant_spec(h_list=(2.0,))


def test_spec_kappa_and_run_id():
    spec = SweepSpec("var2d", CutoffFunction.bump((0.5, 0.5), (math.inf, 0.35)), "intermediate", HS, c=2.0)
    assert spec.exponent == 0.5
    assert spec.mu_of(1 / 16) == pytest.approx(8.0)
    assert spec.run_id() == SweepSpec("var2d", spec.psi, "intermediate", HS[::-1], c=2.0).run_id()
    assert spec.run_id() != SweepSpec("var2d", spec.psi, "intermediate", HS, c=3.0).run_id()
    json.dumps(spec.to_dict())


def test_regime_thresholds():
    m1, m2 = regime_thresholds(0.01)
    lg = math.log(100)
    assert m1 == pytest.approx(10 / math.sqrt(lg))
    assert m2 == pytest.approx(100 / lg)
    assert regime_thresholds(1.0) == (math.inf, math.inf)


def test_predicted_exponent():
    assert predicted_exponent(2, 0.5) == 0.5


# -- sweeps -----------------------------------------------------------------------------


def test_constant_field_remainder_vanishes():
    records = run_remainder_sweep(constant_spec())
    assert [r.h for r in records] == [1 / 16, 1 / 32]
    for r, want in zip(records, (3, 12)):
        assert r.N_numeric == pytest.approx(want, abs=1e-9)
        assert r.principal == pytest.approx(want, rel=1e-12)
        assert r.R <= 1e-9
        assert r.method == "local_trace"
        assert not r.fatal


def test_fatal_record_on_flux_error():
    rec = run_point(constant_spec(h_list=(1 / 8,)), 1 / 8)
    assert rec.fatal and "FluxQuantizationError" in rec.flags
    assert math.isnan(rec.R)


def test_sweep_is_deterministic_across_workers(tmp_path):
    spec = constant_spec()
    a = run_remainder_sweep(spec, workers=1)
    b = run_remainder_sweep(spec, workers=2)
    write_records_csv(a, tmp_path / "a.csv")
    write_records_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_worker_count(monkeypatch):
    monkeypatch.delenv("MAGWEYL_WORKERS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("MAGWEYL_WORKERS", "3")
    assert worker_count(1) == 3
    monkeypatch.setenv("MAGWEYL_WORKERS", "x")
    with pytest.raises(ConfigError):
        worker_count()


# -- fits ------------------------------------------------------------------------------------


def test_fit_power_law():
    fit = fit_scaling(synthetic(HS, lambda h: h**-0.5))
    assert fit.slope == pytest.approx(0.5, abs=1e-12)
    assert fit.residual < 1e-12


def test_fit_constant_and_zeros():
    assert fit_scaling(synthetic(HS, lambda h: 3.0)).slope == pytest.approx(0.0, abs=1e-12)
    recs = synthetic(HS, lambda h: 0.0 if h == 1 / 8 else h**-1)
    fit = fit_scaling(recs)
    assert fit.skipped == 1 and fit.points == 4
    assert fit.slope == pytest.approx(1.0)
    with pytest.raises(DomainError):
        fit_scaling(synthetic(HS[:2], lambda h: 1.0))


def test_monotone_inversions():
    assert monotone_inversions([5, 4, 3, 2]) == 0
    assert monotone_inversions([5, 6, 3, 4]) == 2


# -- degeneracy -------------------------------------------------------------------------------


def test_degeneracy_two_dimensional():
    sc = const2d()
    lat = Lattice.for_scenario(sc, 48, "periodic")
    rep = degeneracy_test(sc, 8.0, 1 / 32, lat)
    assert rep.measured == [12, 12, 12] and rep.exact
    rep2 = degeneracy_test(sc, 16.0, 1 / 32, lat, levels=2)
    assert rep2.measured == [24, 24] and rep2.exact


def test_degeneracy_four_dimensional():
    sc = resonant4d()
    h = 0.1
    rep = degeneracy_test(sc, 6 * math.pi * h, h, Lattice.for_scenario(sc, (8, 8, 6, 6), "periodic"), levels=1)
    assert rep.measured == [6] and rep.exact


def test_degeneracy_unresolved():
    sc = const2d()
    with pytest.warns(RuntimeWarning):
        with pytest.raises(ResolutionError):
            degeneracy_test(sc, 8.0, 1 / 32, Lattice.for_scenario(sc, 8, "periodic"))
    with pytest.raises(DomainError):
        degeneracy_test(sc, 8.0, 1 / 32, Lattice.for_scenario(sc, 8, "dirichlet"))


# -- persistence ---------------------------------------------------------------------------------


def test_empty_csv_has_header(tmp_path):
    write_records_csv([], tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines() == [",".join(RECORD_FIELDS)]


def test_json_round_trip_bit_exact():
    recs = synthetic(HS, lambda h: math.pi * h**-0.37)
    back = records_from_json(records_to_json(recs))
    assert back == recs


def test_csv_round_trip_and_order(tmp_path):
    recs = synthetic(HS, lambda h: 1 / 3 * h**-0.5)
    write_records_csv(recs, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 6
    back = read_records_csv(tmp_path / "r.csv")
    assert back == recs
    assert [r.h for r in back] == sorted(HS, reverse=True)


def test_nan_survives_json():
    rec = run_point(constant_spec(h_list=(1 / 8,)), 1 / 8)
    back = records_from_json(records_to_json([rec]))[0]
    assert math.isnan(back.R) and back.flags == rec.flags


def test_persist_layout(tmp_path):
    recs = synthetic(HS, lambda h: h**-0.5)
    fits = {"all": fit_scaling(recs)}
    out = persist(recs, tmp_path / "run", constant_spec(), fits, wall_time=1.5)
    assert sorted(p.name for p in out.iterdir()) == ["fits.json", "plotdata", "records.csv", "records.json"]
    meta = json.loads((out / "records.json").read_text())
    assert meta["scenario"] == "const2d" and len(meta["run_id"]) == 12 and meta["wall_time_s"] == 1.5
    pts = np.loadtxt(out / "plotdata" / "logR_vs_log_inv_h.dat")
    assert pts.shape == (5, 2)


@given(st.floats(1e-3, 1e3), st.floats(-2.0, 2.0))
def test_fit_affine_equivariance(c, p):
    base = fit_scaling(synthetic(HS, lambda h: h**p * (1 + 0.1 * math.sin(1 / h))))
    scaled = fit_scaling(synthetic(HS, lambda h: c * h**p * (1 + 0.1 * math.sin(1 / h))))
    assert scaled.slope == pytest.approx(base.slope, abs=1e-9)
    assert scaled.intercept - base.intercept == pytest.approx(math.log(c), abs=1e-9)
