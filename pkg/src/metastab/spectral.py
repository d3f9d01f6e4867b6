"""Spectral gaps, mixing profiles and H_{-1} norms of reversible chains."""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chain import as_index, dirichlet_form
from .errors import BadSplit, EigenFailure, GridTooCoarse, NonzeroMean, NumericalError
from .semigroup import propagate, uniformize
from .transforms import _ExitSolver, reflect_chain, trace_chain

__all__ = [
    "SpectralResult",
    "GapSandwich",
    "MixingProfile",
    "spectral_gap",
    "reflected_gaps",
    "gap_sandwich",
    "gap_upper_bound_capacity",
    "harmonic_extension",
    "mixing_profile",
    "hminus1_norm",
    "split_hminus1_norm",
]

DENSE_LIMIT = 2000
GRID_RATIO = 1.25
GRID_START = 0.01
GRID_CAP = 600


@dataclass(frozen=True)
class SpectralResult:
    """Smallest nonzero eigenvalue of ``-L`` and a normalised eigenfunction.

    The eigenfunction has ``E_pi[f] = 0``, ``E_pi[f**2] = 1`` and its sign is
    fixed so that the last state with a non-negligible value is positive.
    """

    gap: float
    eigenfunction: np.ndarray
    residual: float


def _symmetrized(chain):
    s = np.sqrt(chain.pi)
    S = sp.diags(s) @ (-chain.generator) @ sp.diags(1.0 / s)
    S = S.tocsr()
    asym = abs(S - S.T)
    err = float(asym.max()) if asym.nnz else 0.0
    # detailed balance holds only up to the construction tolerance
    if err > 1e-8 * max(1.0, chain.max_rate):
        raise EigenFailure(f"symmetrized generator is not symmetric ({err:.2e})")
    return ((S + S.T) * 0.5).tocsr(), s


def spectral_gap(chain):
    """Spectral gap from the symmetrized generator ``D^1/2 (-L) D^-1/2``.

    A single-state chain has an infinite gap.
    """
    n = chain.n
    if n == 1:
        return SpectralResult(np.inf, np.zeros(1), 0.0)
    S, s = _symmetrized(chain)
    try:
        if n < DENSE_LIMIT:
            vals, vecs = sla.eigh(S.toarray(), subset_by_index=[0, 1])
        else:
            sigma = -1e-6 * max(1e-12, chain.max_rate)
            vals, vecs = spla.eigsh(S.tocsc(), k=2, sigma=sigma, which="LM")
            order = np.argsort(vals)
            vals, vecs = vals[order], vecs[:, order]
    except (np.linalg.LinAlgError, spla.ArpackError) as exc:
        raise EigenFailure(str(exc)) from exc
    gap = float(vals[1])
    f = vecs[:, 1] / s
    f -= np.dot(chain.pi, f)
    f /= np.sqrt(np.dot(chain.pi, f * f))
    big = np.flatnonzero(np.abs(f) > 1e-8)
    if big.size and f[big[-1]] < 0:
        f = -f
    r = chain.rates @ f - chain.holding * f + gap * f
    resid = float(np.sqrt(np.dot(chain.pi, r * r)))
    if resid > 1e-8 * max(1.0, chain.max_rate):
        raise EigenFailure(f"eigen residual {resid:.2e} too large")
    return SpectralResult(gap, f, resid)


def reflected_gaps(chain, partition):
    """Gap of the chain reflected at each well (``inf`` for one-state wells)."""
    return np.array([spectral_gap(reflect_chain(chain, w)).gap for w in partition.wells])


@dataclass(frozen=True)
class GapSandwich:
    """Comparison of the gap with the gap of the trace on a subset.

    ``lower = gap_trace * (1 - correction)`` where ``correction`` is the
    eigenfunction mass outside the subset divided by the subset's mass.
    """

    gap: float
    gap_trace: float
    correction: float
    lower: float

    @property
    def upper_slack(self):
        return self.gap_trace - self.gap

    @property
    def lower_slack(self):
        return self.gap - self.lower

    @property
    def ok(self):
        tol = 1e-10 * max(1.0, self.gap_trace)
        return self.upper_slack >= -tol and self.lower_slack >= -tol


def gap_sandwich(chain, subset):
    E = as_index(chain, subset)
    full = spectral_gap(chain)
    trace = trace_chain(chain, E)
    gE = spectral_gap(trace).gap
    out = np.ones(chain.n, dtype=bool)
    out[E] = False
    f = full.eigenfunction
    corr = float(np.dot(chain.pi[out], f[out] ** 2)) / chain.pi[E].sum()
    return GapSandwich(full.gap, gE, corr, gE * (1.0 - corr))


def gap_upper_bound_capacity(chain, A, subset=None, *, check=False):
    """Capacity bound on the gap of the trace on ``subset``.

    With ``B = subset \\ A`` the bound is ``pi(E) Cap(A, B) / (pi(A) pi(B))``,
    the capacity taken for the original chain.  ``check=True`` also computes
    the trace gap and raises if the bound fails.
    """
    from .potential import capacity

    E = np.arange(chain.n) if subset is None else as_index(chain, subset)
    A = as_index(chain, A)
    if A.size == 0 or not np.all(np.isin(A, E)):
        raise BadSplit("A must be a nonempty subset of the traced set")
    B = np.setdiff1d(E, A)
    if B.size == 0:
        raise BadSplit("A must be a strict subset of the traced set")
    bound = chain.pi[E].sum() * capacity(chain, A, B).value / (chain.pi[A].sum() * chain.pi[B].sum())
    if check:
        gE = spectral_gap(trace_chain(chain, E)).gap
        if gE > bound * (1 + 1e-9):
            raise NumericalError(f"trace gap {gE!r} exceeds capacity bound {bound!r}")
    return float(bound)


def harmonic_extension(chain, subset, F, *, check=True):
    """Extend ``F`` from ``subset`` by ``F(eta) = E_eta[F(X at H_subset)]``.

    ``F`` is given on the sorted states of ``subset``.  With ``check`` the
    energy of the extension is compared with the subset's mass times the
    energy of ``F`` for the trace chain.
    """
    E = as_index(chain, subset)
    F = np.asarray(F, dtype=float)
    if F.shape != (E.size,):
        raise BadSplit(f"F has shape {F.shape}, subset has {E.size} states")
    out = np.empty(chain.n)
    out[E] = F
    if E.size < chain.n:
        solver = _ExitSolver(chain, E)
        out[solver.outside] = solver.extend(F)
    if check:
        lhs = dirichlet_form(chain, out)
        rhs = chain.pi[E].sum() * dirichlet_form(trace_chain(chain, E), F)
        if abs(lhs - rhs) > 1e-10 * max(1.0, abs(lhs)):
            raise NumericalError(f"extension energy {lhs!r} differs from trace energy {rhs!r}")
    return out


@dataclass(frozen=True)
class MixingProfile:
    """Worst-case total-variation distance to equilibrium on a time grid.

    ``t_mix[eps]`` is the first time with ``d(t) <= eps``, refined by bisection
    between grid points.  ``bound`` is ``log(4 / min pi) / gap``.
    """

    times: np.ndarray
    d: np.ndarray
    t_mix: dict
    gap: float
    bound: float

    @property
    def bound_ok(self):
        return self.t_mix.get(0.25, 0.0) <= self.bound * (1 + 1e-9)


def _worst_tv(M, pi):
    return float(0.5 * np.max(np.abs(M - pi).sum(axis=1)))


def mixing_profile(chain, epsilons=(0.25,), *, tol=1e-12):
    """Worst-case TV distance through the uniformized semigroup."""
    eps = sorted({float(e) for e in epsilons} | {0.25})
    n = chain.n
    gap = spectral_gap(chain).gap
    pi = chain.pi
    d0 = 1.0 - float(pi.min())
    if n == 1:
        return MixingProfile(np.zeros(1), np.zeros(1), {e: 0.0 for e in eps}, np.inf, 0.0)
    Q = chain.generator
    P, lam = uniformize(Q)
    target = min(eps)
    times = [0.0]
    ds = [d0]
    mats = [np.eye(n)]
    t = GRID_START / gap
    while ds[-1] > target:
        if len(times) > GRID_CAP:
            raise GridTooCoarse(f"d(t) still {ds[-1]:.3g} at t = {times[-1]:.3g}")
        M = propagate(Q, mats[-1], t - times[-1], side="left", tol=tol, P=P, lam=lam)
        times.append(t)
        ds.append(_worst_tv(M, pi))
        mats.append(M)
        t *= GRID_RATIO
    times = np.array(times)
    ds = np.array(ds)

    t_mix = {}
    for e in eps:
        if d0 <= e:
            t_mix[e] = 0.0
            continue
        k = int(np.argmax(ds <= e))
        lo, hi = times[k - 1], times[k]
        base = mats[k - 1]
        for _ in range(40):
            if hi - lo <= 1e-9 * hi:
                break
            mid = 0.5 * (lo + hi)
            M = propagate(Q, base, mid - times[k - 1], side="left", tol=tol, P=P, lam=lam)
            if _worst_tv(M, pi) <= e:
                hi = mid
            else:
                lo = mid
        t_mix[e] = float(hi)
    bound = float(np.log(4.0 / pi.min()) / gap)
    return MixingProfile(times, ds, t_mix, gap, bound)


def hminus1_norm(chain, f, *, check=True):
    """Squared ``H_{-1}`` norm ``<f, (-L)^+ f>_pi`` of a mean-zero function.

    Solved as a saddle-point system with the mean-zero constraint appended.
    ``check`` asserts the spectral bound ``<f, f>_pi / gap``.
    """
    f = np.asarray(f, dtype=float)
    pi = chain.pi
    scale = max(1.0, float(np.max(np.abs(f)))) if f.size else 1.0
    if abs(np.dot(pi, f)) > 1e-10 * scale:
        raise NonzeroMean(f"E_pi[f] = {np.dot(pi, f):.3e}")
    n = chain.n
    if n == 1:
        return 0.0
    A = (sp.diags(pi) @ (-chain.generator)).tocsr()
    A = (A + A.T) * 0.5
    col = sp.csr_matrix(pi.reshape(-1, 1))
    K = sp.bmat([[A, col], [col.T, None]], format="csc")
    rhs = np.concatenate([pi * f, [0.0]])
    try:
        sol = spla.splu(K).solve(rhs)
    except RuntimeError as exc:
        raise NumericalError(f"saddle system singular: {exc}") from exc
    h = sol[:n]
    val = float(np.dot(pi * f, h))
    if check:
        gap = spectral_gap(chain).gap
        bound = float(np.dot(pi, f * f)) / gap
        if val > bound * (1 + 1e-8) + 1e-14:
            raise NumericalError(f"H-1 norm {val!r} exceeds spectral bound {bound!r}")
    return val


def split_hminus1_norm(chain, partition, f):
    """``sum_x pi(E^x) ||f||^2_{x,-1}`` with norms of the reflected chains.

    ``f`` must have mean zero on every well; ``chain`` lives on the union of
    the wells.
    """
    f = np.asarray(f, dtype=float)
    total = 0.0
    for w in partition.wells:
        if w.size == 1:
            if abs(f[w[0]]) > 1e-10:
                raise NonzeroMean("a one-state well needs f = 0 there")
            continue
        total += chain.pi[w].sum() * hminus1_norm(reflect_chain(chain, w), f[w], check=False)
    return total
