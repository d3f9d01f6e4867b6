"""Model generators: the dog graph, the depinned polymer and small test chains.

State enumeration is canonical: dog-graph vertices are integer tuples and
polymer states are increment bitstrings (``'1'`` = up step), both sorted
lexicographically.
"""
from dataclasses import dataclass
from itertools import combinations, product
from math import ceil, log

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .chain import build_chain
from .errors import (
    DegenerateWell,
    DimensionUnsupported,
    DisconnectedDraw,
    NotReversible,
    StateSpaceTooLarge,
)
from .transforms import Partition

__all__ = [
    "DogGraphSpec",
    "PolymerSpec",
    "dog_graph",
    "polymer",
    "polymer_heights",
    "fL_trial",
    "two_state",
    "birth_death",
    "random_reversible",
    "random_wells",
]

POLYMER_CAP = 16


@dataclass(frozen=True)
class DogGraphSpec:
    """Two ``d``-dimensional cubes of side ``N`` sharing the origin.

    ``alpha`` sets the well margin; it defaults to ``(log N)**-0.25`` for
    ``N >= 3`` and to 1/2 below, where that expression is undefined or
    exceeds one.
    """

    N: int
    d: int = 2
    alpha: float = None

    @property
    def margin(self):
        a = self.alpha
        if a is None:
            a = log(self.N) ** -0.25 if self.N >= 3 else 0.5
        return int(ceil(a * self.N - 1e-12))


def _dog_vertices(N, d):
    pos = list(product(range(N + 1), repeat=d))
    neg = [tuple(-c for c in v) for v in pos if any(v)]
    return sorted(pos + neg)


def dog_graph(spec):
    """Unit-rate nearest-neighbour walk on the dog graph with wells ``(A, B)``.

    ``B`` holds the vertices whose smallest coordinate is at least
    ``alpha * N``; ``A = -B``.  Well 0 is ``A`` and well 1 is ``B``.
    """
    N, d = int(spec.N), int(spec.d)
    if N < 1 or d < 2:
        raise DimensionUnsupported("dog graph needs N >= 1 and d >= 2")
    m = spec.margin
    if m < 1 or m > N:
        raise DegenerateWell(f"margin {m} leaves an empty or overlapping well")
    verts = _dog_vertices(N, d)
    index = {v: i for i, v in enumerate(verts)}
    rows, cols = [], []
    for v, i in index.items():
        for k in range(d):
            for step in (-1, 1):
                w = v[:k] + (v[k] + step,) + v[k + 1:]
                j = index.get(w)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
    n = len(verts)
    R = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    chain = build_chain(R, verts)
    B = [i for i, v in enumerate(verts) if min(v) >= m]
    A = [index[tuple(-c for c in verts[i])] for i in B]
    return chain, Partition(n, (A, B))


def fL_trial(spec, L):
    """Logarithmic trial function across the junction of a planar dog graph.

    Zero at the origin and on the negative cube; on the diagonal
    ``eta_1 + eta_2 = k`` of the positive cube it equals ``H_k / H_L`` for
    ``k <= L`` (``H`` the harmonic numbers) and one beyond.  Values follow
    the vertex order of :func:`dog_graph`.
    """
    if spec.d != 2:
        raise DimensionUnsupported("the logarithmic trial is defined for d = 2")
    N = int(spec.N)
    L = int(L)
    if not 1 <= L <= N:
        raise ValueError(f"need 1 <= L <= N, got L={L}")
    H = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, L + 1))])
    out = []
    for v in _dog_vertices(N, 2):
        if min(v) < 0 or v == (0, 0):
            out.append(0.0)
        else:
            k = v[0] + v[1]
            out.append(H[k] / H[L] if k <= L else 1.0)
    return np.array(out)


@dataclass(frozen=True)
class PolymerSpec:
    """Bridges of ``2N`` steps with pinning weight ``alpha`` per zero.

    ``ell`` defaults to ``ceil((log N)**0.25)``.
    """

    N: int
    alpha: float = 0.3
    ell: int = None
    cap: int = POLYMER_CAP

    @property
    def width(self):
        return self.ell if self.ell is not None else int(ceil(log(self.N) ** 0.25))


def polymer_heights(label):
    """Height profile ``(eta_{-N}, ..., eta_N)`` of an increment bitstring."""
    steps = np.array([1 if c == "1" else -1 for c in label])
    return np.concatenate([[0], np.cumsum(steps)])


def _up_rate(left, alpha):
    # rate of lifting a local minimum whose two neighbours sit at height `left`
    if left == 1:
        return 1.0 / (1.0 + alpha)
    if left == -1:
        return alpha / (1.0 + alpha)
    return 0.5


def polymer(spec):
    """Corner-flip dynamics on bridges; wells are the positive and negative
    excursions away from the ``ell`` sites nearest each end.

    The stationary measure is checked against ``alpha ** (number of zeros)``.
    """
    N, alpha, ell = int(spec.N), float(spec.alpha), spec.width
    if N < 2 or not 0 < alpha < 1 or not 1 <= ell < N:
        raise ValueError(f"invalid polymer parameters N={N}, alpha={alpha}, ell={ell}")
    if 2 * N > spec.cap:
        raise StateSpaceTooLarge(f"2N = {2 * N} exceeds the enumeration cap {spec.cap}")
    labels = sorted(
        "".join("1" if k in ups else "0" for k in range(2 * N))
        for ups in map(set, combinations(range(2 * N), N))
    )
    index = {lab: i for i, lab in enumerate(labels)}
    heights = np.array([polymer_heights(lab) for lab in labels])
    rows, cols, vals = [], [], []
    for i, lab in enumerate(labels):
        h = heights[i]
        for k in range(1, 2 * N):
            if h[k - 1] != h[k + 1]:
                continue
            # the corner at site k sits between steps k-1 and k
            flipped = lab[:k - 1] + lab[k] + lab[k - 1] + lab[k + 1:]
            if h[k] == h[k - 1] - 1:
                rate = _up_rate(h[k - 1], alpha)
            else:
                rate = _up_rate(-h[k - 1], alpha)
            rows.append(i)
            cols.append(index[flipped])
            vals.append(rate)
    n = len(labels)
    R = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    chain = build_chain(R, labels)
    zeros = (heights == 0).sum(axis=1)
    target = alpha ** zeros.astype(float)
    target /= target.sum()
    if np.max(np.abs(chain.pi - target)) > 1e-12:
        raise NotReversible("stationary measure differs from alpha ** zeros")
    inner = heights[:, ell + 1:2 * N - ell]
    E1 = np.flatnonzero(np.all(inner > 0, axis=1))
    E2 = np.flatnonzero(np.all(inner < 0, axis=1))
    if E1.size == 0:
        raise DegenerateWell("positive well is empty")
    return chain, Partition(n, (E1, E2))


def two_state(a, b):
    """Chain on ``{0, 1}`` jumping ``0 -> 1`` at rate a and ``1 -> 0`` at rate b."""
    return build_chain(np.array([[0.0, a], [b, 0.0]]))


def birth_death(up, down=None):
    """Nearest-neighbour chain on ``0..n-1``.

    ``up[i]`` is the rate ``i -> i+1`` and ``down[i]`` the rate ``i+1 -> i``;
    ``down`` defaults to ``up``.
    """
    up = np.asarray(up, dtype=float)
    down = up if down is None else np.asarray(down, dtype=float)
    n = up.size + 1
    i = np.arange(n - 1)
    R = sp.csr_matrix(
        (np.concatenate([up, down]), (np.concatenate([i, i + 1]), np.concatenate([i + 1, i]))),
        shape=(n, n),
    )
    return build_chain(R)


def random_reversible(n, seed, sparsity=0.3, *, retries=100, return_measure=False):
    """Random reversible chain from a positive measure and symmetric conductances.

    Each pair is an edge with probability ``sparsity``; draws whose graph is
    disconnected are rejected.  ``R(i, j) = c(i, j) / pi(i)``.
    """
    rng = np.random.default_rng(seed)
    for _ in range(retries):
        upper = np.triu(rng.random((n, n)) < sparsity, 1)
        if connected_components(sp.csr_matrix(upper), directed=False)[0] == 1:
            break
    else:
        raise DisconnectedDraw(f"no connected graph in {retries} draws (sparsity {sparsity})")
    pi = np.exp(rng.normal(size=n))
    pi /= pi.sum()
    C = np.where(upper, np.exp(rng.normal(scale=0.5, size=(n, n))), 0.0)
    C = C + C.T
    chain = build_chain(sp.csr_matrix(C / pi[:, None]))
    return (chain, pi) if return_measure else chain


def _connected(adj, nodes):
    inside = set(nodes.tolist())
    stack = [int(nodes[0])]
    seen = {stack[0]}
    while stack:
        s = stack.pop()
        for t in adj.indices[adj.indptr[s]:adj.indptr[s + 1]]:
            t = int(t)
            if t in inside and t not in seen:
                seen.add(t)
                stack.append(t)
    return len(seen) == len(inside)


def random_wells(chain, kappa, seed, delta_prob=0.3):
    """Random partition into ``kappa`` wells, each connected through internal edges.

    Wells grow from distinct random seeds by simultaneous breadth-first
    search; afterwards each state is moved to the separating set with
    probability ``delta_prob`` when its well stays connected without it.
    """
    rng = np.random.default_rng(seed)
    n = chain.n
    if not 2 <= kappa <= n:
        raise ValueError(f"need 2 <= kappa <= n, got kappa={kappa}, n={n}")
    adj = ((chain.rates + chain.rates.T) > 0).tocsr()
    label = np.full(n, -1)
    seeds = rng.choice(n, size=kappa, replace=False)
    label[seeds] = np.arange(kappa)
    frontier = [[s] for s in seeds]
    while any(frontier):
        for x in rng.permutation(kappa):
            nxt = []
            for s in frontier[x]:
                for t in adj.indices[adj.indptr[s]:adj.indptr[s + 1]]:
                    if label[t] < 0:
                        label[t] = x
                        nxt.append(t)
            frontier[x] = nxt
    label_of = label.copy()
    for s in rng.permutation(n):
        if rng.random() >= delta_prob or s in seeds:
            continue
        label[s] = -2
        if not _connected(adj, np.flatnonzero(label == label_of[s])):
            label[s] = label_of[s]
        else:
            label[s] = -1
    return Partition(n, tuple(np.flatnonzero(label == x) for x in range(kappa)))
