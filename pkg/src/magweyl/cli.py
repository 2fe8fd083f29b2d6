"""Command-line entry point: ``analyze``, ``weyl``, ``count``, ``reduce`` and ``sweep``.

Flags override values from ``--config`` (a versioned TOML file).  Exit codes:
0 success, 1 invalid configuration, 2 computation error, 3 budget exceeded.
Errors are also written to stderr as JSON ``{code, message, field}``.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .errors import BudgetError, ConfigError, MagweylError
from .scenarios import REGISTRY, check_keys, get_scenario, load_config

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE, EXIT_BUDGET = 0, 1, 2, 3

DEFAULTS = {
    "scenario": "const2d",
    "mu": 8.0,
    "h": 0.125,
    "tau": 0.0,
    "eps0": 0.05,
    "eps1": 0.05,
    "max_order": 3,
    "n": 48,
    "bc": "periodic",
    "method": "auto",
    "psi": "domain",
    "resolution": 64,
    "kind": "full_rank",
    "out": "sweep_out",
    "workers": 1,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        field = None
        if "unrecognized arguments:" in message:
            field = message.split("unrecognized arguments:", 1)[1].split()[0]
        elif "argument " in message:
            field = message.split("argument ", 1)[1].split(":", 1)[0].split("/")[0]
        raise ConfigError(message, field)


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=80, max_help_position=30)


def _add(p, flag, help_text, **kw):
    key = flag.lstrip("-").replace("-", "_")
    default = DEFAULTS.get(key)
    suffix = f" (default: {default})" if default is not None else ""
    p.add_argument(flag, default=None, help=help_text + suffix, **kw)


def build_parser():
    parser = _Parser(prog="magweyl", description="Magnetic Weyl asymptotics toolkit.", formatter_class=_formatter)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, scenario=True):
        p.add_argument("--config", default=None, help="TOML run configuration; flags override it (default: none)")
        p.add_argument("--json", action="store_true", help="machine-readable JSON output (default: off)")
        if scenario:
            _add(p, "--scenario", f"registry scenario: {', '.join(sorted(REGISTRY))}")
            p.add_argument(
                "--param", action="append", default=[], metavar="KEY=VALUE", help="scenario parameter override, repeatable (default: none)"
            )

    p = sub.add_parser("analyze", help="frequencies, resonance partitions and conditions", formatter_class=_formatter)
    common(p)
    _add(p, "--eps0", "tolerance of the resonance partitions", type=float)
    _add(p, "--eps1", "threshold of the non-degeneracy conditions", type=float)
    _add(p, "--max-order", "largest resonance order to enumerate", type=int)
    _add(p, "--mu", "coupling mu", type=float)
    _add(p, "--h", "semiclassical parameter h", type=float)
    _add(p, "--tau", "spectral level tau", type=float)

    p = sub.add_parser("weyl", help="magnetic Weyl density at a point or integrated", formatter_class=_formatter)
    common(p)
    _add(p, "--mu", "coupling mu", type=float)
    _add(p, "--h", "semiclassical parameter h", type=float)
    _add(p, "--tau", "spectral level tau", type=float)
    _add(p, "--kind", "density: full_rank, general or standard")
    _add(p, "--psi", "cutoff: domain, zero, indicator:LO:HI or bump:CENTER:RADII")
    _add(p, "--resolution", "quadrature cells per axis", type=int)
    p.add_argument("--x", default=None, help="evaluate the density at this comma-separated point (default: integrate)")

    p = sub.add_parser("count", help="lattice eigenvalue count below tau", formatter_class=_formatter)
    common(p)
    _add(p, "--mu", "coupling mu", type=float)
    _add(p, "--h", "semiclassical parameter h", type=float)
    _add(p, "--tau", "spectral level tau", type=float)
    _add(p, "--n", "lattice points per axis (comma-separated for per-axis)")
    _add(p, "--bc", "boundary: periodic, dirichlet or per-axis list")
    _add(p, "--method", "counting method: auto, dense or inertia")

    p = sub.add_parser("reduce", help="symplectic reduction of a constant-field scenario", formatter_class=_formatter)
    common(p)
    _add(p, "--mu", "coupling mu", type=float)

    p = sub.add_parser("sweep", help="remainder sweep from a config file", formatter_class=_formatter)
    common(p, scenario=False)
    p.add_argument("--spec", default=None, help="sweep configuration file (TOML) (default: --config)")
    _add(p, "--out", "output directory")
    _add(p, "--workers", "concurrent sweep points (MAGWEYL_WORKERS overrides)", type=int)
    return parser


# -- option resolution ----------------------------------------------------------------

RUN_KEYS = {"mu", "h", "tau", "eps0", "eps1", "max_order", "n", "bc", "method", "psi", "resolution", "kind", "x"}


def _resolve(args):
    """Merge built-in defaults < config file < flags."""
    opts = {k: v for k, v in DEFAULTS.items()}
    file_scenario = None
    if getattr(args, "config", None):
        data = load_config(args.config)
        check_keys(data, {"version", "scenario", "run", "sweep"}, "")
        if "scenario" in data:
            file_scenario = data["scenario"]
        run = data.get("run", {})
        check_keys(run, RUN_KEYS, "run")
        opts.update(run)
    for key, value in vars(args).items():
        if value is not None and key not in ("param", "config", "json", "command"):
            opts[key] = value
    overrides = {}
    if file_scenario is not None and getattr(args, "scenario", None) is None:
        check_keys(file_scenario, {"name", "params"}, "scenario")
        opts["scenario"] = file_scenario.get("name", opts["scenario"])
        overrides.update(file_scenario.get("params", {}))
    for item in getattr(args, "param", []) or []:
        if "=" not in item:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}", "param")
        k, v = item.split("=", 1)
        overrides[k.strip()] = _number(v, f"param.{k.strip()}")
    opts["params"] = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return opts


def _number(text, field):
    text = text.strip()
    if "," in text:
        return tuple(_number(t, field) for t in text.split(","))
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse number {text!r}", field) from None


def _floats(text, field):
    if isinstance(text, (list, tuple)):
        return tuple(float(t) for t in text)
    parts = str(text).split(",")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as numbers", field) from None


def _require(cond, message, field):
    if not cond:
        raise ConfigError(message, field)


def _check_mu_h(opts, mu_min=1.0):
    mu, h = float(opts["mu"]), float(opts["h"])
    _require(math.isfinite(mu) and mu >= mu_min, f"mu must be >= {mu_min:g}, got {mu}", "mu")
    _require(0 < h <= 1, f"h must lie in (0, 1], got {h}", "h")
    _require(math.isfinite(float(opts["tau"])), "tau must be finite", "tau")
    return mu, h


def parse_psi(text, scenario):
    from .weyl import CutoffFunction

    d = scenario.dimension
    if text == "domain":
        return CutoffFunction.indicator(scenario.lower, scenario.upper)
    if text == "zero":
        return CutoffFunction.zero(d)
    kind, _, rest = str(text).partition(":")
    a, _, b = rest.partition(":")
    if kind not in ("indicator", "bump") or not a or not b:
        raise ConfigError(f"cannot parse cutoff {text!r}", "psi")
    A, B = _floats(a, "psi"), _floats(b, "psi")
    if len(A) != d or len(B) != d:
        raise ConfigError(f"cutoff needs {d} entries per vector", "psi")
    psi = CutoffFunction.indicator(A, B) if kind == "indicator" else CutoffFunction.bump(A, B)
    return psi


# -- subcommands ----------------------------------------------------------------------------

def _scenario(opts):
    return get_scenario(opts["scenario"], **opts["params"])


def cmd_analyze(opts):
    from .geometry import intensity_matrix
    from .resonance import check_gap_condition, check_microhyp_constant, enumerate_resonances, resonance_partition

    eps0 = float(opts["eps0"])
    _require(eps0 > 0, "eps0 must be positive", "eps0")
    sc = _scenario(opts)
    inten = intensity_matrix(sc, sc.center)
    f = inten.frequencies
    report = {"scenario": sc.name, "frequencies": f.tolist(), "rank": int(inten.rank)}
    if len(f):
        part = resonance_partition(f, eps0)
        report["M"] = [[i + 1 for i in g] for g in part.groups_M]
        report["N"] = [[i + 1 for i in g] for g in part.groups_N]
        rels = enumerate_resonances(f, int(opts["max_order"]))
        report["relations"] = [{"gamma": list(r.gamma), "order": r.order, "residual": r.residual} for r in rels]
    X = sc.grid(7, margin=0.05)
    conds = [check_microhyp_constant(sc, "weak", float(opts["eps1"]), X).to_dict()]
    if inten.full_rank:
        mu, h = _check_mu_h(opts)
        conds.append(check_gap_condition(sc, mu, h, float(opts["eps1"]), X, float(opts["tau"])).to_dict())
    report["conditions"] = conds
    return report, f"f = {f.tolist()}, M = {report.get('M')}, N = {report.get('N')}"


def cmd_weyl(opts):
    from .weyl import WeylDensity, WeylParams, integrate_density

    mu, h = _check_mu_h(opts)
    sc = _scenario(opts)
    params = WeylParams(mu, h, float(opts["tau"]))
    kind = opts["kind"]
    _require(kind in ("full_rank", "general", "standard"), f"unknown density kind {kind!r}", "kind")
    density = WeylDensity(sc, params, kind)
    if opts.get("x") is not None:
        x = np.array(_floats(opts["x"], "x"))
        _require(x.size == sc.dimension, f"--x needs {sc.dimension} coordinates", "x")
        sc.require_inside(x)
        value = float(density(x))
        active = int(density.active_count(x))
        out = {"value": value, "quad_error_estimate": 0.0, "active_levels": active}
        return out, f"density = {value!r}"
    res = int(opts["resolution"])
    _require(res >= 1, "resolution must be >= 1", "resolution")
    psi = parse_psi(opts["psi"], sc)
    psi.validate(sc, tuple(range(sc.dimension)))
    result = integrate_density(density, psi, n=res)
    out = {"value": result.value, "quad_error_estimate": result.quad_error_estimate, "active_levels": result.active_levels}
    return out, f"integral = {result.value!r} (error estimate {result.quad_error_estimate:.3g})"


def _lattice_opts(opts, sc):
    from .oracle import BOUNDARIES, Lattice

    n = opts["n"]
    n = tuple(int(v) for v in _floats(n, "n")) if not isinstance(n, int) else (n,)
    if len(n) == 1:
        n = n * sc.dimension
    _require(len(n) == sc.dimension, f"--n needs 1 or {sc.dimension} entries", "n")
    _require(all(k >= 4 for k in n), "lattice needs at least 4 points per axis", "n")
    bc = opts["bc"]
    bc = tuple(bc) if isinstance(bc, (list, tuple)) else tuple(str(bc).split(","))
    if len(bc) == 1:
        bc = bc * sc.dimension
    _require(len(bc) == sc.dimension and all(b in BOUNDARIES for b in bc), f"invalid boundary {opts['bc']!r}", "bc")
    return Lattice.for_scenario(sc, n, bc)


def cmd_count(opts):
    from .oracle import assemble, count_below

    mu, h = _check_mu_h(opts, mu_min=0.0)
    method = opts["method"]
    _require(method in ("auto", "dense", "inertia"), f"unknown method {method!r}", "method")
    sc = _scenario(opts)
    lat = _lattice_opts(opts, sc)
    H = assemble(sc, mu, h, lat)
    res = count_below(H, float(opts["tau"]), method)
    out = {"count": res.count, "N": res.N, "method": res.method, "warnings": list(H.warnings)}
    if res.jitter:
        out["jitter"] = res.jitter
    return out, f"count = {res.count} (N = {res.N}, {res.method})"


def cmd_reduce(opts):
    from .reduction import reduce_constant

    mu = float(opts["mu"])
    _require(mu > 0, "mu must be positive", "mu")
    sc = _scenario(opts)
    pipe, red = reduce_constant(sc, mu)
    out = {"pipeline": pipe.to_dict(), "reduced_form": red.to_dict()}
    return out, f"reduced: {red.oscillator_part}"


def sweep_spec_from_config(data):
    """``[scenario]`` plus ``[sweep]`` (with a ``[sweep.psi]`` table) into a :class:`SweepSpec`."""
    from .experiments import SweepSpec
    from .weyl import CutoffFunction

    if "scenario" not in data or "sweep" not in data:
        raise ConfigError("sweep config needs [scenario] and [sweep] sections", "sweep")
    scen = data["scenario"]
    check_keys(scen, {"name", "params"}, "scenario")
    sw = dict(data["sweep"])
    allowed = {
        "regime", "h_list", "c", "kappa", "mu_h", "points_per_wavelength", "tau", "bc",
        "quad_n", "eps1", "threshold_eps", "dense_budget", "psi", "workers",
    }
    check_keys(sw, allowed, "sweep")
    psi_tab = sw.pop("psi", None)
    if psi_tab is None:
        raise ConfigError("sweep.psi is required", "sweep.psi")
    check_keys(psi_tab, {"kind", "center", "radii", "lower", "upper"}, "sweep.psi")
    kind = psi_tab.get("kind")
    if kind == "bump":
        psi = CutoffFunction.bump(psi_tab["center"], psi_tab["radii"])
    elif kind == "indicator":
        psi = CutoffFunction.indicator(psi_tab["lower"], psi_tab["upper"])
    else:
        raise ConfigError(f"unknown cutoff kind {kind!r}", "sweep.psi.kind")
    sw.pop("workers", None)
    for key in ("h_list", "bc", "quad_n"):
        if isinstance(sw.get(key), list):
            sw[key] = tuple(sw[key])
    if "regime" not in sw or "h_list" not in sw:
        raise ConfigError("sweep.regime and sweep.h_list are required", "sweep")
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in scen.get("params", {}).items()}
    get_scenario(scen["name"], **params)  # validate names before any work
    return SweepSpec(scen["name"], psi, scenario_params=params, **sw)


def cmd_sweep(args, opts):
    from .experiments import fit_scaling, persist, predicted_exponent, timed_sweep

    path = args.spec or args.config
    if not path:
        raise ConfigError("sweep needs --spec <config file>", "spec")
    data = load_config(path)
    check_keys(data, {"version", "scenario", "sweep"}, "")
    spec = sweep_spec_from_config(data)
    workers = args.workers if args.workers is not None else data["sweep"].get("workers", DEFAULTS["workers"])
    records, wall = timed_sweep(spec, workers)
    fits = {}
    d = spec.build_scenario().dimension
    pred = predicted_exponent(d, spec.exponent) if spec.regime != "gap" else None
    try:
        fits["remainder"] = fit_scaling(records, pred)
    except MagweylError:
        pass
    out_dir = persist(records, opts["out"], spec, fits, wall)
    fatal = [r.h for r in records if r.fatal]
    out = {"out": str(out_dir), "records": len(records), "fatal": fatal, "fits": {k: v.to_dict() for k, v in fits.items()}}
    return out, f"{len(records)} records written to {out_dir}", (EXIT_COMPUTE if fatal else EXIT_OK)


def _emit_error(exc, code):
    payload = {"code": code, "message": str(exc)}
    payload["field"] = getattr(exc, "field", None)
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_CONFIG
        opts = _resolve(args)
        status = EXIT_OK
        if args.command == "sweep":
            out, human, status = cmd_sweep(args, opts)
        else:
            handler = {"analyze": cmd_analyze, "weyl": cmd_weyl, "count": cmd_count, "reduce": cmd_reduce}[args.command]
            out, human = handler(opts)
        if args.json:
            sys.stdout.write(json.dumps(out, sort_keys=True) + "\n")
        else:
            sys.stdout.write(human + "\n")
        return status
    except ConfigError as exc:
        return _emit_error(exc, EXIT_CONFIG)
    except BudgetError as exc:
        return _emit_error(exc, EXIT_BUDGET)
    except MagweylError as exc:
        return _emit_error(exc, EXIT_COMPUTE)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
