"""Relative Weyl remainder on a variable-field scenario, two regimes side by side.

With a tilted potential the energy surface is microhyperbolic and the
remainder decays slowly; tuning mu*h so the threshold sits between Landau
levels everywhere on the support makes it collapse.  Takes about a minute.
"""
import math

from magweyl.experiments import SweepSpec, fit_scaling, run_remainder_sweep
from magweyl.weyl import CutoffFunction

hs = (1 / 8, 1 / 12, 1 / 16, 1 / 24, 1 / 32)
psi = CutoffFunction.bump((0.5, 0.5), (math.inf, 0.35))
specs = {
    "intermediate": SweepSpec("var2d", psi, "intermediate", hs, c=1.0, kappa=0.5, quad_n=(4, 1024)),
    "gap": SweepSpec("var2d", psi, "gap", hs, mu_h=0.425, quad_n=(4, 1024)),
}
results = {name: run_remainder_sweep(spec) for name, spec in specs.items()}
print(f"{'h':>8s} {'n':>4s} " + " ".join(f"{name + ' R/principal':>26s}" for name in results))
for row in zip(*results.values()):
    print(f"{row[0].h:8.4f} {row[0].n:4d} " + " ".join(f"{r.relative:26.3e}" for r in row))
for name, records in results.items():
    fit = fit_scaling(records)
    print(f"{name}: fitted slope {fit.slope:.3f}")
