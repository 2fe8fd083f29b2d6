"""Landau levels on a flat torus: lattice counts against the integrated Weyl density.

Run with ``python3 demos/landau_torus.py``.  Prints, for a few thresholds
placed between Landau levels, the integrated magnetic Weyl density, the
lattice eigenvalue count, and the offset of each eigenvalue cluster from its
level in units of the squared grid spacing.
"""
import numpy as np

from magweyl.oracle import Lattice, assemble, count_below, landau_clusters, spectrum
from magweyl.scenarios import const2d
from magweyl.weyl import CutoffFunction, WeylDensity, WeylParams, integrate_density

mu, h = 8.0, 1 / 32
sc = const2d()
psi = CutoffFunction.indicator(sc.lower, sc.upper)
levels = [(2 * a + 1) * mu * h - 1 for a in range(4)]

for n in (24, 48):
    H = assemble(sc, mu, h, Lattice.for_scenario(sc, n, "periodic"))
    dx2 = float(H.lattice.spacing.max()) ** 2
    print(f"n = {n}  (N = {H.N}, spacing^2 = {dx2:.3g})")
    for lo, hi in zip(levels, levels[1:]):
        tau = 0.5 * (lo + hi)
        weyl = integrate_density(WeylDensity(sc, WeylParams(mu, h, tau)), psi, n=4).value
        print(f"  tau = {tau:+.3f}: Weyl integral {weyl:7.3f}, lattice count {count_below(H, tau).count}")
    for c, e in zip(landau_clusters(spectrum(H), levels), levels):
        print(f"  level {e:+.3f}: {c.multiplicity} eigenvalues, offset {(c.center - e) / dx2:+.2f} spacing^2")

# the offset per spacing^2 stays put under refinement: second-order truncation
print("predicted offset / spacing^2:", [-(mu**2) * (2 * a * a + 2 * a + 1) / 8 for a in range(3)])
