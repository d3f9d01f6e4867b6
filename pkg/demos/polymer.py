"""
A pinned polymer flipping between two sides
===========================================

Bridges of ``2N`` steps are rewarded for staying away from zero.  The
corner-flip dynamics keeps the polymer mostly above or mostly below the
axis, and switching sides takes long.  The ratio of the gap to the gaps
inside the wells shows the separation of scales growing with ``N``.
"""
import numpy as np

from metastab import ChainFamily, PolymerSpec, check_conditions, polymer, spectral_gap
from metastab.metastability import original_reflected_gaps

for N in (3, 4, 5):
    chain, part = polymer(PolymerSpec(N, alpha=0.3))
    g = spectral_gap(chain).gap
    refl = original_reflected_gaps(chain, part)
    masses = [chain.pi[w].sum() for w in part.wells]
    print(f"2N={2 * N:>2}: {chain.n:>3} states, gap {g:.3e}, "
          f"gap / min well gap {g / refl.min():.3f}, well masses {np.round(masses, 3)}")

# the same numbers as trends, with a verdict per condition
family = ChainFamily([(N, *polymer(PolymerSpec(N))) for N in (3, 4, 5)])
report = check_conditions(family)
for name, trend in report.trends.items():
    if trend.kind != "stabilize":
        print(f"{name:<9} {np.round(trend.values, 4)}  {trend.verdict}")
