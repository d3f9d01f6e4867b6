"""
Two squares joined at a corner
==============================

The dog graph glues two ``N x N`` grids at the origin.  A walker started
in one grid needs a long time to find the shared corner, so the well label
of the walk behaves like a two-state chain on the time scale set by the
gap of the trace process.

This script measures the gap scaling, the normalised star capacity, the
predicted limit rates and the empirical well marginals.
"""
import numpy as np

from metastab import (
    DogGraphSpec,
    LimitChain,
    dog_graph,
    limit_semigroup,
    order_fdd_estimate,
    spectral_gap,
    trace_chain,
    two_valley_ratio,
)

# gap times N^2 log N should neither blow up nor vanish
for N in (4, 8, 16, 32):
    chain, part = dog_graph(DogGraphSpec(N))
    g = spectral_gap(chain).gap
    print(f"N={N:>2}: {chain.n:>5} states, gap {g:.3e}, gap*N^2 log N = {g * N * N * np.log(N):.3f}")

# star capacity over the trace gap approaches one half
for N in (4, 8, 16):
    chain, part = dog_graph(DogGraphSpec(N))
    rep = two_valley_ratio(chain, *part.wells)
    print(f"N={N:>2}: normalised ratio {rep.ratio:.3f} (gamma {rep.gamma:.3g})")

# sample the order process on the trace time scale and compare with the
# symmetric two-state chain jumping at rate 1/2
N = 8
chain, part = dog_graph(DogGraphSpec(N))
A = part.wells[0]
nu = np.zeros(chain.n)
nu[A] = chain.pi[A] / chain.pi[A].sum()
theta = 1.0 / spectral_gap(trace_chain(chain, part.union)).gap
times = (0.5, 1.0, 2.0)
est = order_fdd_estimate(chain, part, nu, theta, times, n=5000, seed=1)
limit = LimitChain.from_rates([[0, 0.5], [0.5, 0]])
for j, t in enumerate(times):
    p = limit_semigroup(limit, t)[0, 1]
    print(f"t={t}: P[in B] sampled {est.marginals[j, 1]:.3f} +- {est.halfwidth[j, 1]:.3f}, "
          f"limit {p:.3f}")
