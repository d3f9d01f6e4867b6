"""Uniformized evaluation of Markov semigroups.

For a (possibly sub-Markovian) generator ``Q`` with uniformization rate
``Lam >= max_i -Q(i,i)``, ``P = I + Q / Lam`` is sub-stochastic and

    exp(tQ) = sum_k Poisson(Lam t; k) P**k

The Poisson series is truncated where the neglected mass falls below ``tol``.
Time integrals use the same series with Poisson tail probabilities as weights:

    int_0^T exp(sQ) ds = (1/Lam) sum_k P[Poisson(Lam T) > k] P**k
"""
import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

UNIFORMIZATION_FACTOR = 1.05
POISSON_TOL = 1e-12
# matrices up to this size are multiplied densely
DENSE_LIMIT = 200

__all__ = ["uniformize", "propagate", "propagate_grid", "integrate", "killed_generator"]


def uniformize(Q, factor=UNIFORMIZATION_FACTOR):
    """Return ``(P, Lam)`` with ``P = I + Q / Lam``."""
    Q = sp.csr_matrix(Q)
    lam = factor * float(np.max(-Q.diagonal())) if Q.shape[0] else 0.0
    if lam <= 0:
        lam = 1.0
    P = (sp.identity(Q.shape[0], format="csr") + Q / lam).tocsr()
    return P, lam


def _window(mu, tol):
    if mu <= 0:
        return 0, np.ones(1)
    left = int(poisson.ppf(tol / 2, mu))
    right = int(poisson.isf(tol / 2, mu)) + 1
    k = np.arange(left, right + 1)
    return left, poisson.pmf(k, mu)


def _stepper(P, side):
    """One multiplication by ``P`` from the requested side."""
    M = P if side == "right" else P.T
    M = M.toarray() if M.shape[0] <= DENSE_LIMIT else M.tocsr()
    if side == "right":
        return lambda v: M @ v
    return lambda v: M @ v if v.ndim == 1 else (M @ v.T).T


def propagate(Q, v, t, *, side="right", tol=POISSON_TOL, P=None, lam=None):
    """``exp(tQ) v`` (``side='right'``) or ``v exp(tQ)`` (``side='left'``).

    ``v`` may be a vector or a 2-d array; for ``side='left'`` the rows of a
    2-d ``v`` are measures.
    """
    v = np.asarray(v, dtype=float)
    if t == 0:
        return v.copy()
    if P is None:
        P, lam = uniformize(Q)
    left, w = _window(lam * t, tol)
    step = _stepper(P, side)
    out = np.zeros_like(v)
    cur = v
    for k in range(left + w.size):
        if k >= left:
            out += w[k - left] * cur
        cur = step(cur)
    return out


def propagate_grid(Q, v, times, *, side="right", tol=POISSON_TOL):
    """Evaluate ``exp(tQ) v`` on an increasing grid by chaining increments."""
    times = np.asarray(times, dtype=float)
    P, lam = uniformize(Q)
    out = []
    cur = np.asarray(v, dtype=float)
    prev = 0.0
    for t in times:
        cur = propagate(Q, cur, t - prev, side=side, tol=tol, P=P, lam=lam)
        out.append(cur)
        prev = t
    return np.array(out)


def integrate(Q, v, T, *, side="right", tol=POISSON_TOL):
    """``int_0^T exp(sQ) v ds`` evaluated exactly through the uniformized series."""
    v = np.asarray(v, dtype=float)
    if T == 0:
        return np.zeros_like(v)
    P, lam = uniformize(Q)
    mu = lam * T
    kmax = int(poisson.isf(tol, mu)) + 2
    weights = poisson.sf(np.arange(kmax), mu)
    step = _stepper(P, side)
    out = np.zeros_like(v)
    cur = v
    for k in range(kmax):
        out += weights[k] * cur
        cur = step(cur)
    return out / lam


def killed_generator(chain, region):
    """Generator restricted to ``region``; leaving it kills the process."""
    region = np.asarray(region, dtype=np.intp)
    L = chain.generator
    return L[region][:, region].tocsr()
