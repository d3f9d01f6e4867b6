"""Exact event-driven sampling and the empirical side of the limit theorems.

All samplers draw from counter-based random streams keyed by
``(seed, trajectory index)`` (see :mod:`metastab._kernels`), so splitting a
run into shards never changes its statistics.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm
from statsmodels.stats.diagnostic import lilliefors

from . import _kernels
from .chain import as_index
from .errors import EmptySubset, StateOutsideWells, Unreachable
from .semigroup import integrate, killed_generator, propagate, propagate_grid
from .transforms import trace_chain

__all__ = [
    "Trajectory",
    "FddEstimate",
    "HittingSample",
    "DeltaOccupation",
    "TightnessReport",
    "sample_path",
    "sample_trace_path",
    "order_fdd_estimate",
    "order_marginals_exact",
    "hitting_time_samples",
    "delta_occupation",
    "tightness_diagnostic",
    "integral_sup_squared",
    "empirical_rates",
    "worker_count",
]

EXACT_LIMIT = 2000
Z95 = float(norm.ppf(0.975))


def worker_count(shards=1):
    """Number of worker threads, capped by ``METASTAB_THREADS``."""
    cap = int(os.environ.get("METASTAB_THREADS", os.cpu_count() or 1))
    return max(1, min(int(shards), cap))


def _sharded(kernel, n, shards, *args):
    """Run ``kernel(first, count)`` over ``n`` trajectories in contiguous shards
    and concatenate in shard order."""
    shards = max(1, min(int(shards), n))
    edges = np.linspace(0, n, shards + 1).astype(np.int64)
    jobs = [(int(a), int(b - a)) for a, b in zip(edges[:-1], edges[1:])]
    workers = worker_count(shards)
    if workers == 1:
        parts = [kernel(a, c) for a, c in jobs]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda j: kernel(*j), jobs))
    return np.concatenate(parts)


def _starts(chain, init, n, seed):
    """Initial states for ``n`` trajectories: a fixed state or draws from a measure."""
    arr = np.asarray(init)
    if arr.ndim == 0:
        s = int(arr)
        if not 0 <= s < chain.n:
            raise EmptySubset(f"initial state {s} out of range")
        return np.full(n, s, dtype=np.int64)
    w = np.asarray(init, dtype=float)
    cum = np.cumsum(w / w.sum())
    cum[-1] = 1.0
    return _kernels.draw_states(cum, np.uint64(seed), 0, n)


@dataclass(frozen=True)
class Trajectory:
    """Breakpoints ``(times[k], states[k])``; the state holds until the next time.

    ``real_time`` is the wall-clock duration of the underlying path; for a
    trace trajectory it is at least ``horizon``.
    """

    times: np.ndarray
    states: np.ndarray
    horizon: float
    init: int
    seed: int
    real_time: float = None

    def occupation(self, n):
        ends = np.append(self.times[1:], self.horizon)
        out = np.zeros(n)
        np.add.at(out, self.states, ends - self.times)
        return out


def sample_path(chain, init, horizon, seed, index=0):
    """Gillespie path of ``chain`` on ``[0, horizon]``.

    ``init`` is a state index or an initial measure; ``index`` selects the
    random stream within the seed.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    start = int(_starts(chain, init, index + 1, seed)[index])
    indptr, indices, cum = chain.jump_table
    mask = np.ones(chain.n, dtype=np.bool_)
    key = np.uint64(_kernels.stream_key(np.uint64(seed), np.uint64(index)))
    times, states = _kernels.sample_path(indptr, indices, cum, chain.holding, start,
                                         float(horizon), mask, key)
    return Trajectory(times, states, float(horizon), start, seed, float(horizon))


def sample_trace_path(chain, subset, init, horizon, seed, index=0):
    """Trace path on ``subset`` obtained by deleting the time spent outside it.

    The full chain is sampled until the time spent inside ``subset`` reaches
    ``horizon``; the clock is the generalised inverse of that occupation time.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    E = as_index(chain, subset)
    mask = np.zeros(chain.n, dtype=np.bool_)
    mask[E] = True
    start = int(_starts(chain, init, index + 1, seed)[index])
    if not mask[start]:
        raise StateOutsideWells("trace path must start inside the subset")
    indptr, indices, cum = chain.jump_table
    key = np.uint64(_kernels.stream_key(np.uint64(seed), np.uint64(index)))
    times, states = _kernels.sample_path(indptr, indices, cum, chain.holding, start,
                                         float(horizon), mask, key)
    dur = np.diff(times)
    inside = mask[states]
    clock = np.concatenate([[0.0], np.cumsum(np.where(inside[:-1], dur, 0.0))])
    real = float(times[-1] + (horizon - clock[-1]))
    keep_t = clock[inside]
    keep_s = states[inside]
    first = np.ones(keep_s.size, dtype=bool)
    first[1:] = keep_s[1:] != keep_s[:-1]
    return Trajectory(keep_t[first], keep_s[first], float(horizon), start, seed, real)


def empirical_rates(traj, n):
    """Jump counts divided by occupation times: a rate-matrix estimate."""
    counts = np.zeros((n, n))
    np.add.at(counts, (traj.states[:-1], traj.states[1:]), 1.0)
    occ = traj.occupation(n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return counts / occ[:, None], counts, occ


@dataclass(frozen=True)
class FddEstimate:
    """Empirical joint law of the well labels at ``times``.

    ``joint`` has shape ``(kappa,) * len(times)``; ``marginals[j, x]`` is the
    frequency of label x at ``times[j]``, with 95% half-widths ``halfwidth``.
    """

    times: np.ndarray
    joint: np.ndarray
    n: int
    marginals: np.ndarray
    halfwidth: np.ndarray
    start_well: int


def _start_well(partition, nu):
    for x, w in enumerate(partition.wells):
        if abs(nu[w].sum() - 1.0) < 1e-12:
            return x
    raise StateOutsideWells("initial measure must be concentrated on one well")


def order_fdd_estimate(chain, partition, nu, theta, times, n, seed, *,
                       method="direct", shards=1):
    """Finite-dimensional distributions of the rescaled order process.

    ``method='direct'`` samples the trace chain itself; ``'time-change'``
    samples the full chain and deletes the time spent off the wells.  Both
    read the well label at trace times ``theta * times``.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("times must be nonempty and strictly increasing")
    if n < 100:
        raise ValueError("at least 100 samples are required")
    nu = np.asarray(nu, dtype=float)
    x0 = _start_well(partition, nu)
    grid = theta * times
    k = partition.kappa
    if method == "direct":
        trace = trace_chain(chain, partition.union)
        tp = partition.on_union()
        target, labels = trace, tp.labels.astype(np.int64)
        mask = np.ones(trace.n, dtype=np.bool_)
        weights = nu[partition.union]
    elif method == "time-change":
        target, labels = chain, partition.labels.astype(np.int64)
        mask = np.zeros(chain.n, dtype=np.bool_)
        mask[partition.union] = True
        weights = nu
    else:
        raise ValueError(f"unknown method {method!r}")
    starts = _starts(target, weights, n, seed)
    indptr, indices, cum = target.jump_table

    def run(first, count):
        return _kernels.labels_at_clock(indptr, indices, cum, target.holding,
                                        starts[first:first + count], labels, mask,
                                        grid, np.uint64(seed), first)

    lab = _sharded(run, n, shards)
    flat = np.ravel_multi_index(lab.T, (k,) * times.size)
    joint = np.bincount(flat, minlength=k ** times.size).reshape((k,) * times.size) / n
    marg = np.stack([np.bincount(lab[:, j], minlength=k) / n for j in range(times.size)])
    half = Z95 * np.sqrt(marg * (1 - marg) / n)
    return FddEstimate(times, joint, n, marg, half, x0)


def order_marginals_exact(chain, partition, nu, theta, times):
    """Exact one-time marginals of the order process via the trace semigroup."""
    trace = trace_chain(chain, partition.union)
    tp = partition.on_union()
    rows = propagate_grid(trace.generator, np.asarray(nu, dtype=float)[partition.union],
                          theta * np.asarray(times, dtype=float), side="left")
    return np.array([[r[w].sum() for w in tp.wells] for r in rows])


@dataclass(frozen=True)
class HittingSample:
    """Hitting-time sample with a Lilliefors test against the exponential law."""

    samples: np.ndarray
    mean: float
    stderr: float
    ks_stat: float
    ks_pvalue: float

    def exponential_at(self, level=0.01):
        return self.ks_pvalue > level


def hitting_time_samples(chain, init, target, n, seed, *, max_jumps=10**9, shards=1):
    """``n`` independent samples of the hitting time of ``target``."""
    T = as_index(chain, target)
    if T.size == 0:
        raise Unreachable("target set is empty")
    mask = np.zeros(chain.n, dtype=np.bool_)
    mask[T] = True
    starts = _starts(chain, init, n, seed)
    indptr, indices, cum = chain.jump_table

    def run(first, count):
        return _kernels.hitting_times(indptr, indices, cum, chain.holding,
                                      starts[first:first + count], mask,
                                      np.uint64(seed), first, max_jumps)

    s = _sharded(run, n, shards)
    if np.any(s < 0):
        raise Unreachable("target not reached within the jump budget")
    stat, p = lilliefors(s, dist="exp") if np.all(s > 0) and n >= 5 else (np.nan, np.nan)
    return HittingSample(s, float(s.mean()), float(s.std(ddof=1) / np.sqrt(n)),
                         float(stat), float(p))


@dataclass(frozen=True)
class DeltaOccupation:
    """``E_nu[int_0^t 1{X(s theta) in Delta} ds]`` with its method and interval."""

    value: float
    method: str
    ci: tuple = None


def delta_occupation(chain, partition, nu, theta, t, n=None, seed=None, *,
                     method="auto", shards=1):
    """Time spent in the separating set on the scale ``theta`` up to ``t``.

    The exact route integrates the semigroup by uniformization; it is used
    below ``EXACT_LIMIT`` states unless ``method='monte-carlo'``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    nu = np.asarray(nu, dtype=float)
    D = partition.delta
    if D.size == 0:
        return DeltaOccupation(0.0, "exact", (0.0, 0.0))
    if method == "auto":
        method = "exact" if chain.n <= EXACT_LIMIT else "monte-carlo"
    if method == "exact":
        occ = integrate(chain.generator, nu, theta * t, side="left")
        v = float(occ[D].sum() / theta)
        return DeltaOccupation(v, "exact", (v, v))
    if n is None or seed is None:
        raise ValueError("Monte Carlo route needs n and seed")
    mask = np.zeros(chain.n, dtype=np.bool_)
    mask[D] = True
    starts = _starts(chain, nu, n, seed)
    indptr, indices, cum = chain.jump_table

    def run(first, count):
        return _kernels.occupation(indptr, indices, cum, chain.holding,
                                   starts[first:first + count], mask, theta * t,
                                   np.uint64(seed), first)

    occ = _sharded(run, n, shards) / theta
    v = float(occ.mean())
    h = Z95 * float(occ.std(ddof=1)) / np.sqrt(n)
    return DeltaOccupation(v, "monte-carlo", (v - h, v + h))


@dataclass(frozen=True)
class TightnessReport:
    """Worst-start probabilities of leaving a well before ``delta * theta``.

    ``exact[x, j]`` and ``estimate[x, j]`` refer to well x and ``deltas[j]``;
    ``starts[x]`` lists the starting states examined (trace-chain indices are
    translated back to the original chain).
    """

    deltas: np.ndarray
    theta: float
    starts: list
    exact: np.ndarray
    estimate: np.ndarray


def tightness_diagnostic(chain, partition, theta, deltas, m, seed, *, paths=200):
    """Early-exit probabilities of the trace process from the worst starts.

    For every well, up to ``m`` starting states are examined (all of them
    when the well is small enough).  Exit probabilities come from the killed
    semigroup and, independently, from ``paths`` simulated exits per start.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    deltas = np.asarray(deltas, dtype=float)
    trace = trace_chain(chain, partition.union)
    tp = partition.on_union()
    rng = np.random.default_rng(seed)
    k = tp.kappa
    exact = np.full((k, deltas.size), np.nan)
    est = np.zeros((k, deltas.size))
    chosen = []
    indptr, indices, cum = trace.jump_table
    for x, w in enumerate(tp.wells):
        picks = w if w.size <= m else np.sort(rng.choice(w, size=m, replace=False))
        chosen.append(partition.union[picks].tolist())
        if w.size <= EXACT_LIMIT:
            Q = killed_generator(trace, w)
            pos = np.searchsorted(w, picks)
            for j, d in enumerate(deltas):
                surv = propagate(Q, np.ones(w.size), d * theta)
                exact[x, j] = float(np.max(1.0 - surv[pos]))
        target = np.ones(trace.n, dtype=np.bool_)
        target[w] = False
        starts = np.repeat(picks.astype(np.int64), paths)
        h = _kernels.hitting_times(indptr, indices, cum, trace.holding, starts, target,
                                   np.uint64(seed), x * 10**9, 10**9)
        h = h.reshape(picks.size, paths)
        for j, d in enumerate(deltas):
            est[x, j] = float(np.max(np.mean(h <= d * theta, axis=1)))
    return TightnessReport(deltas, float(theta), chosen, exact, est)


def integral_sup_squared(chain, f, T, n, seed, init=None, *, shards=1):
    """Mean of ``sup_{t <= T} (int_0^t f(X_s) ds)**2`` and its standard error.

    Paths start from ``init`` (default: the stationary measure).
    """
    f = np.asarray(f, dtype=float)
    starts = _starts(chain, chain.pi if init is None else init, n, seed)
    indptr, indices, cum = chain.jump_table

    def run(first, count):
        return _kernels.integral_sup_sq(indptr, indices, cum, chain.holding,
                                        starts[first:first + count], f, float(T),
                                        np.uint64(seed), first)

    s = _sharded(run, n, shards)
    return float(s.mean()), float(s.std(ddof=1) / np.sqrt(n))
