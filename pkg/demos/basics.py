"""
Building blocks on a small chain
================================

A walk through the core objects: a reversible chain, its trace on a subset,
an equilibrium potential, a capacity and a spectral gap.  Every number
printed here can be checked by hand.
"""
import numpy as np

from metastab import birth_death, capacity, equilibrium_potential, spectral_gap, trace_chain

# a path 0 - 1 - 2 with unit rates; its stationary measure is uniform
chain = birth_death([1.0, 1.0])
print("stationary measure:", chain.pi)

# probability of reaching 0 before 2 is linear along the path
V = equilibrium_potential(chain, [0], [2]).values
print("equilibrium potential:", V)

# two unit conductances of weight 1/3 in series
print("capacity between the ends:", capacity(chain, [0], [2]).value)

# watching the chain only at the ends: one jump every two time units
trace = trace_chain(chain, [0, 2])
print("trace rates:\n", trace.rates.toarray())

# the gap of the path and of its trace
print("gap:", spectral_gap(chain).gap, " trace gap:", spectral_gap(trace).gap)

# the gap of the chain never exceeds the gap of its trace
assert spectral_gap(chain).gap <= spectral_gap(trace).gap + 1e-12
np.testing.assert_allclose(trace.rates.toarray(), [[0, 0.5], [0.5, 0]])
