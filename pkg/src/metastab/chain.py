"""Finite reversible continuous-time Markov chains.

A :class:`Chain` holds the off-diagonal rate matrix in CSR form together with
its stationary measure, holding rates and a reversibility certificate.  All
other modules work in state-index space; labels only matter for I/O.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import (
    DimensionMismatch,
    EmptySubset,
    NegativeRate,
    NotReversible,
    NumericalError,
    Reducible,
    ZeroMass,
)

__all__ = [
    "Chain",
    "build_chain",
    "apply_generator",
    "dirichlet_form",
    "conditioned_measure",
    "as_index",
    "indicator",
    "REVERSIBILITY_TOL",
]

REVERSIBILITY_TOL = 1e-10
# below this many states linear systems are solved densely
DENSE_SOLVE_LIMIT = 200


@dataclass(frozen=True, eq=False)
class Chain:
    """Immutable reversible chain.

    Attributes
    ----------
    labels : tuple
        Opaque state labels, position ``i`` is state index ``i``.
    rates : scipy.sparse.csr_matrix
        Off-diagonal jump rates ``R(i, j)``; the diagonal is never stored.
    pi : ndarray
        Stationary probability measure, strictly positive.
    holding : ndarray
        Holding rates ``lambda(i) = sum_j R(i, j)``.
    balance_error : float
        ``max |pi(i) R(i,j) - pi(j) R(j,i)|`` measured at construction.
    """

    labels: tuple
    rates: sp.csr_matrix
    pi: np.ndarray
    holding: np.ndarray
    balance_error: float

    @property
    def n(self):
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    def __repr__(self):
        return f"Chain(n={self.n}, nnz={self.rates.nnz})"

    @cached_property
    def index(self):
        """Map label -> state index."""
        return {lab: i for i, lab in enumerate(self.labels)}

    @cached_property
    def generator(self):
        """Generator ``L = R - diag(lambda)`` as CSR."""
        return (self.rates - sp.diags(self.holding)).tocsr()

    @cached_property
    def jump_probs(self):
        inv = np.zeros_like(self.holding)
        np.divide(1.0, self.holding, out=inv, where=self.holding > 0)
        return (sp.diags(inv) @ self.rates).tocsr()

    @cached_property
    def jump_table(self):
        """``(indptr, indices, cumprob)`` for sampling the embedded jump chain."""
        P = self.jump_probs
        cum = P.data.copy()
        indptr = P.indptr.astype(np.int64)
        for i in range(self.n):
            lo, hi = indptr[i], indptr[i + 1]
            if hi > lo:
                cum[lo:hi] = np.cumsum(cum[lo:hi])
                cum[hi - 1] = 1.0
        return indptr, P.indices.astype(np.int64), cum

    @cached_property
    def dense_generator(self):
        """Dense copy of the generator, only for small chains."""
        return self.generator.toarray()

    @property
    def max_rate(self):
        return float(self.rates.data.max()) if self.rates.nnz else 0.0

    def mass(self, subset):
        return float(self.pi[as_index(self, subset)].sum())

    def states(self, labels):
        """Translate labels into a sorted index array."""
        idx = self.index
        return np.array(sorted(idx[lab] for lab in labels), dtype=np.intp)


def as_index(chain_or_n, subset):
    """Normalise a state set into a sorted, duplicate-free index array.

    ``subset`` may be an iterable of indices or a boolean mask of length n.
    """
    n = chain_or_n if isinstance(chain_or_n, (int, np.integer)) else chain_or_n.n
    arr = np.asarray(subset)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise DimensionMismatch(f"mask of shape {arr.shape} for {n} states")
        return np.flatnonzero(arr)
    arr = np.unique(arr.astype(np.intp).ravel())
    if arr.size and (arr[0] < 0 or arr[-1] >= n):
        raise DimensionMismatch(f"state index out of range [0, {n})")
    return arr


def indicator(n, subset):
    out = np.zeros(n)
    out[as_index(n, subset)] = 1.0
    return out


def _offdiagonal(rates):
    if sp.issparse(rates):
        R = sp.csr_matrix(rates, dtype=float, copy=True)
    else:
        R = sp.csr_matrix(np.asarray(rates, dtype=float))
    if R.shape[0] != R.shape[1]:
        raise DimensionMismatch(f"rate matrix must be square, got {R.shape}")
    R.setdiag(0.0)
    R.eliminate_zeros()
    R.sort_indices()
    return R


def _stationary(R, holding):
    """Solve pi L = 0 with sum(pi) = 1 by replacing one equation."""
    n = R.shape[0]
    if n == 1:
        return np.ones(1)
    b = np.zeros(n)
    b[n - 1] = 1.0
    if n <= DENSE_SOLVE_LIMIT:
        A = R.T.toarray()
        A[np.diag_indices(n)] = -holding
        A[n - 1, :] = 1.0
        pi = np.linalg.solve(A, b)
    else:
        A = (R - sp.diags(holding)).T.tocsr()
        A = sp.vstack([A[: n - 1], sp.csr_matrix(np.ones((1, n)))]).tocsc()
        pi = spla.spsolve(A, b)
    if not np.all(np.isfinite(pi)):
        raise NumericalError("stationary solve produced non-finite entries")
    return pi


def _assemble(rates, labels=None, *, tol=REVERSIBILITY_TOL, pi=None, min_states=2):
    R = _offdiagonal(rates)
    n = R.shape[0]
    if n < min_states:
        raise DimensionMismatch(f"need at least {min_states} states, got {n}")
    if R.nnz and R.data.min() < 0:
        raise NegativeRate(f"negative off-diagonal rate {R.data.min():g}")
    if labels is None:
        labels = tuple(range(n))
    labels = tuple(labels)
    if len(labels) != n:
        raise DimensionMismatch(f"{len(labels)} labels for {n} states")
    if len(set(labels)) != n:
        raise DimensionMismatch("state labels must be unique")

    ncomp, comp = connected_components(R, directed=True, connection="strong")
    if ncomp > 1:
        groups = [np.flatnonzero(comp == c).tolist() for c in range(ncomp)]
        raise Reducible(f"chain has {ncomp} communicating classes", groups)

    holding = np.asarray(R.sum(axis=1)).ravel()
    if pi is None:
        pi = _stationary(R, holding)
    pi = np.asarray(pi, dtype=float)
    if pi.min() <= 0:
        raise NumericalError(f"stationary measure not positive (min {pi.min():g})")
    pi = pi / pi.sum()

    flux = sp.diags(pi) @ R
    asym = abs(flux - flux.T)
    err = float(asym.max()) if asym.nnz else 0.0
    scale = float(R.data.max()) if R.nnz else 1.0
    if err > tol * scale:
        raise NotReversible(
            f"detailed balance violated by {err:.3e} (tolerance {tol * scale:.3e})"
        )
    return Chain(labels, R, pi, holding, err)


def build_chain(rates, labels=None, *, tol=REVERSIBILITY_TOL):
    """Build a certified reversible chain from an off-diagonal rate matrix.

    Parameters
    ----------
    rates : array_like or sparse matrix, shape (n, n)
        ``rates[i, j]`` is the jump rate from ``i`` to ``j``.  The diagonal is
        ignored and reconstructed as minus the row sum.
    labels : sequence, optional
        State labels; defaults to ``range(n)``.
    tol : float
        Reversibility tolerance relative to the largest rate.

    Raises
    ------
    Reducible, NotReversible, NegativeRate, DimensionMismatch
    """
    return _assemble(rates, labels, tol=tol)


def _check_vec(chain, f, name="f"):
    f = np.asarray(f, dtype=float)
    if f.shape != (chain.n,):
        raise DimensionMismatch(f"{name} has shape {f.shape}, chain has {chain.n} states")
    return f


def apply_generator(chain, f):
    """``(Lf)(i) = sum_j R(i,j) (f(j) - f(i))``."""
    f = _check_vec(chain, f)
    return chain.rates @ f - chain.holding * f


def _edge_energy(chain, f):
    R = chain.rates.tocoo()
    diff = f[R.col] - f[R.row]
    return 0.5 * float(np.sum(chain.pi[R.row] * R.data * diff * diff))


def dirichlet_form(chain, f, g=None):
    """``<f, (-L) g>_pi``; with ``g`` omitted, the energy of ``f``.

    For ``f = g`` the value is computed both as the quadratic form and as the
    edge sum ``(1/2) sum pi(i) R(i,j) (f(j)-f(i))**2``; the two must agree.
    """
    f = _check_vec(chain, f)
    if g is not None:
        g = _check_vec(chain, g, "g")
        return -float(np.dot(chain.pi * f, apply_generator(chain, g)))
    quad = -float(np.dot(chain.pi * f, apply_generator(chain, f)))
    edge = _edge_energy(chain, f)
    scale = max(1.0, abs(edge)) * max(1.0, float(np.max(np.abs(f))) ** 2)
    if abs(quad - edge) > 1e-8 * scale * max(1.0, chain.max_rate):
        raise NumericalError(f"Dirichlet form routes disagree: {quad!r} vs {edge!r}")
    return edge


def conditioned_measure(pi, subset):
    """Restrict ``pi`` to ``subset`` and renormalise; zero elsewhere."""
    pi = np.asarray(pi, dtype=float)
    idx = as_index(len(pi), subset)
    if idx.size == 0:
        raise EmptySubset("cannot condition on an empty set")
    mass = pi[idx].sum()
    if mass <= 0:
        raise ZeroMass("subset carries no mass")
    out = np.zeros_like(pi)
    out[idx] = pi[idx] / mass
    return out
