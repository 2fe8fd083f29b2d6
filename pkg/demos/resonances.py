"""Resonance structure of a few frequency vectors.

Lists the integer relations up to order 4 and the two nested groupings of
indices (pairwise near-equalities, then three-term relations on top).
"""
import math

from magweyl.resonance import enumerate_resonances, resonance_partition

cases = {
    "(1, 2, 3)": (1.0, 2.0, 3.0),
    "(1, 2, 5)": (1.0, 2.0, 5.0),
    "(1, pi, pi^2)": (1.0, math.pi, math.pi**2),
    "(1, 1.001, 3)": (1.0, 1.001, 3.0),
}
for label, f in cases.items():
    rels = [rel.gamma for rel in enumerate_resonances(f, 4)]
    for eps in (1e-9, 1e-2):
        part = resonance_partition(f, eps)
        print(f"{label:14s} eps={eps:g}: M={part.groups_M} N={part.groups_N}")
    print(f"{'':14s} relations of order <= 4: {rels}")
