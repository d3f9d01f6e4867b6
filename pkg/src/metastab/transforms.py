"""Derived chains: trace on a subset, reflection on a well, gamma-enlargement,
and the projection of trace trajectories onto well labels.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .chain import _assemble, as_index
from .errors import (
    EmptySubset,
    InvalidPartition,
    NonpositiveGamma,
    NumericalError,
    ReducibleReflection,
    SolveFailure,
    StateOutsideWells,
)

__all__ = [
    "Partition",
    "EnlargedIndex",
    "OrderPath",
    "trace_chain",
    "reflect_chain",
    "enlarge_chain",
    "project_order",
    "exit_distribution",
]

# Trace rates smaller than this fraction of the holding rate are solver noise.
TRACE_DROP = 1e-14


@dataclass(frozen=True, eq=False)
class Partition:
    """Disjoint wells over ``n`` states; everything else is the separating set.

    Well numbers are 0-based: ``wells[x]`` is well ``x``.
    """

    n: int
    wells: tuple

    def __post_init__(self):
        wells = tuple(as_index(self.n, w) for w in self.wells)
        if len(wells) < 2:
            raise InvalidPartition(f"need at least two wells, got {len(wells)}")
        for x, w in enumerate(wells):
            if w.size == 0:
                raise InvalidPartition(f"well {x} is empty")
        seen = np.concatenate(wells)
        if np.unique(seen).size != seen.size:
            raise InvalidPartition("wells overlap")
        object.__setattr__(self, "wells", wells)

    @property
    def kappa(self):
        return len(self.wells)

    @cached_property
    def union(self):
        return np.sort(np.concatenate(self.wells))

    @cached_property
    def delta(self):
        mask = np.ones(self.n, dtype=bool)
        mask[self.union] = False
        return np.flatnonzero(mask)

    @cached_property
    def labels(self):
        """Well number of each state, ``-1`` on the separating set."""
        out = np.full(self.n, -1, dtype=np.intp)
        for x, w in enumerate(self.wells):
            out[w] = x
        return out

    def others(self, x):
        """Union of all wells except ``x``."""
        return np.sort(np.concatenate([w for y, w in enumerate(self.wells) if y != x]))

    def on_union(self):
        """The same wells re-indexed inside the union (the trace state space)."""
        pos = np.full(self.n, -1, dtype=np.intp)
        pos[self.union] = np.arange(self.union.size)
        return Partition(self.union.size, tuple(pos[w] for w in self.wells))

    def relabel(self, order):
        """Partition with wells permuted: new well ``k`` is old well ``order[k]``."""
        return Partition(self.n, tuple(self.wells[k] for k in order))

    @classmethod
    def from_labels(cls, chain, wells):
        return cls(chain.n, tuple(chain.states(w) for w in wells))


@dataclass(frozen=True)
class EnlargedIndex:
    """Correspondence between original states and their star copies.

    ``originals[k]`` has copy ``stars[k]`` in the enlarged chain; original
    states keep their index.
    """

    n: int
    originals: np.ndarray
    stars: np.ndarray

    def star_of(self, subset):
        subset = as_index(self.n, subset)
        pos = np.searchsorted(self.originals, subset)
        if np.any(pos >= self.originals.size) or np.any(self.originals[np.minimum(pos, self.originals.size - 1)] != subset):
            raise EmptySubset("some states have no star copy")
        return self.stars[pos]


@dataclass(frozen=True)
class OrderPath:
    """Piecewise-constant well-label path stored as ``(time, label)`` breakpoints."""

    times: np.ndarray
    labels: np.ndarray
    horizon: float

    def at(self, t):
        """Label in force at time(s) ``t`` (right-continuous)."""
        k = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return self.labels[k]

    def occupation(self, kappa):
        """Total time spent at each label up to the horizon."""
        ends = np.append(self.times[1:], self.horizon)
        out = np.zeros(kappa)
        np.add.at(out, self.labels, ends - self.times)
        return out

    @property
    def n_changes(self):
        return self.times.size - 1


class _ExitSolver:
    """LU factorisation of ``-L`` on the complement of ``subset``.

    Solves for harmonic functions with prescribed values on ``subset``.
    """

    def __init__(self, chain, subset):
        self.subset = as_index(chain, subset)
        if self.subset.size == 0:
            raise EmptySubset("cannot trace onto an empty set")
        mask = np.ones(chain.n, dtype=bool)
        mask[self.subset] = False
        self.outside = np.flatnonzero(mask)
        L = chain.generator
        self.R_out_in = chain.rates[self.outside][:, self.subset].tocsc()
        if self.outside.size:
            M = -L[self.outside][:, self.outside]
            try:
                self.lu = spla.splu(M.tocsc())
            except RuntimeError as exc:
                raise SolveFailure(f"exit system singular: {exc}") from exc

    def harmonic_measure(self, cols=None):
        """``P_xi[first entrance to subset at zeta]`` for xi outside, zeta in ``cols``."""
        B = self.R_out_in if cols is None else self.R_out_in[:, cols]
        out = self.lu.solve(np.asarray(B.toarray()))
        if not np.all(np.isfinite(out)):
            raise SolveFailure("non-finite exit probabilities")
        return out

    def extend(self, values):
        """Harmonic extension of ``values`` (given on ``subset``) outside it."""
        return self.lu.solve(self.R_out_in @ np.asarray(values, dtype=float))


def exit_distribution(chain, subset):
    """Matrix of first-entrance probabilities into ``subset`` from its complement.

    Returns ``(outside, X)`` with ``X[i, k] = P_{outside[i]}[H_subset = H_{subset[k]}]``.
    """
    solver = _ExitSolver(chain, subset)
    if solver.outside.size == 0:
        return solver.outside, np.zeros((0, solver.subset.size))
    return solver.outside, solver.harmonic_measure()


def trace_chain(chain, subset):
    """Trace of ``chain`` on ``subset``.

    Rates are ``R^E(i, k) = lambda(i) P_i[first return to E lands at k]``,
    obtained from one LU factorisation of the complement block.  The returned
    chain is indexed by ``sorted(subset)`` and carries the matching labels.
    """
    solver = _ExitSolver(chain, subset)
    E, D = solver.subset, solver.outside
    R = chain.rates
    if D.size == 0:
        return chain
    R_EE = R[E][:, E].tocsr()
    R_ED = R[E][:, D].tocsr()
    # only boundary states of E exchange mass with the complement
    bcols = np.flatnonzero(np.diff(solver.R_out_in.indptr))
    brows = np.flatnonzero(np.diff(R_ED.indptr))
    if bcols.size and brows.size:
        X = solver.harmonic_measure(bcols)
        extra = R_ED[brows] @ X
        extra = sp.coo_matrix(extra)
        extra = sp.csr_matrix(
            (extra.data, (brows[extra.row], bcols[extra.col])), shape=(E.size, E.size)
        )
        RE = (R_EE + extra).tocsr()
    else:
        RE = R_EE
    RE.setdiag(0.0)
    RE = RE.tocoo()
    lam = np.asarray(RE.tocsr().sum(axis=1)).ravel()
    keep = RE.data > TRACE_DROP * lam[RE.row]
    RE = sp.csr_matrix((RE.data[keep], (RE.row[keep], RE.col[keep])), shape=(E.size, E.size))
    labels = tuple(chain.labels[i] for i in E)
    traced = _assemble(RE, labels, min_states=1)
    expected = chain.pi[E] / chain.pi[E].sum()
    if not np.allclose(traced.pi, expected, rtol=1e-7, atol=1e-13):
        raise NumericalError("trace stationary measure differs from conditioned measure")
    return traced


def reflect_chain(chain, well):
    """Chain restricted to ``well`` with every jump leaving it removed."""
    W = as_index(chain, well)
    if W.size == 0:
        raise EmptySubset("cannot reflect on an empty well")
    if W.size == chain.n:
        return chain
    RW = chain.rates[W][:, W].tocsr()
    ncomp, comp = connected_components(RW, directed=True, connection="strong")
    if ncomp > 1:
        groups = [W[comp == c].tolist() for c in range(ncomp)]
        raise ReducibleReflection(
            f"well splits into {ncomp} pieces once cut off", groups
        )
    labels = tuple(chain.labels[i] for i in W)
    reflected = _assemble(RW, labels, min_states=1)
    expected = chain.pi[W] / chain.pi[W].sum()
    if not np.allclose(reflected.pi, expected, rtol=1e-7, atol=1e-13):
        raise NumericalError("reflected stationary measure differs from conditioned measure")
    return reflected


def enlarge_chain(chain, gamma, subset=None):
    """Gamma-enlargement: attach a star copy to every state of ``subset``.

    Each state and its copy are linked at rate ``gamma`` in both directions; a
    copy has no other transitions.  With ``subset`` omitted every state gets a
    copy and the stationary measure is ``pi / 2`` on each side.  Stars are
    appended after the original states.

    Returns
    -------
    (Chain, EnlargedIndex)
    """
    if not gamma > 0:
        raise NonpositiveGamma(f"gamma must be positive, got {gamma!r}")
    n = chain.n
    orig = np.arange(n) if subset is None else as_index(chain, subset)
    m = orig.size
    stars = n + np.arange(m)
    R = chain.rates.tocoo()
    rows = np.concatenate([R.row, orig, stars])
    cols = np.concatenate([R.col, stars, orig])
    data = np.concatenate([R.data, np.full(m, float(gamma)), np.full(m, float(gamma))])
    Rg = sp.csr_matrix((data, (rows, cols)), shape=(n + m, n + m))
    labels = tuple(chain.labels) + tuple(("*", chain.labels[i]) for i in orig)
    big = _assemble(Rg, labels)
    expected = np.concatenate([chain.pi, chain.pi[orig]])
    expected /= expected.sum()
    if not np.allclose(big.pi, expected, rtol=1e-7, atol=1e-13):
        raise NumericalError("enlarged stationary measure differs from pi/2 on both copies")
    return big, EnlargedIndex(n, orig, stars)


def project_order(traj, partition):
    """Project a trajectory living in the wells onto well labels.

    Only the breakpoints where the label changes are kept.
    """
    lab = partition.labels[np.asarray(traj.states)]
    if np.any(lab < 0):
        raise StateOutsideWells("trajectory visits the separating set")
    times = np.asarray(traj.times, dtype=float)
    keep = np.ones(lab.size, dtype=bool)
    keep[1:] = lab[1:] != lab[:-1]
    return OrderPath(times[keep], lab[keep], float(traj.horizon))
