"""Compiled event-driven sampling kernels.

Randomness comes from a counter-based generator: trajectory ``i`` of a run
with seed ``s`` draws its ``c``-th uniform as ``mix(key(s, i) + c * GOLDEN)``
where ``mix`` is the SplitMix64 finaliser.  Statistics therefore depend only
on ``(seed, trajectory index)``, never on how trajectories are batched.
"""
import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def stream_key(seed, index):
    return _mix(_mix(np.uint64(seed)) + np.uint64(index) * GOLDEN)


@njit(cache=True, nogil=True)
def uniform(key, counter):
    """Uniform on the open interval (0, 1)."""
    x = _mix(key + np.uint64(counter) * GOLDEN)
    return (np.float64(x >> _S11) + 0.5) * _INV53


@njit(cache=True, nogil=True)
def _jump(indptr, indices, cumprob, s, u):
    lo = indptr[s]
    hi = indptr[s + 1]
    k = lo + np.searchsorted(cumprob[lo:hi], u, side="right")
    if k >= hi:
        k = hi - 1
    return indices[k]


@njit(cache=True, nogil=True)
def sample_path(indptr, indices, cumprob, holding, start, horizon, clock_mask, key):
    """Gillespie path until the clock reaches ``horizon``.

    The clock advances only while the state is in ``clock_mask``; with an
    all-true mask it is ordinary time.  Returns jump times and states
    (first entry at time 0).
    """
    cap = 1024
    times = np.empty(cap)
    states = np.empty(cap, dtype=np.int64)
    times[0] = 0.0
    states[0] = start
    n = 1
    t = 0.0
    clock = 0.0
    s = start
    c = 0
    while True:
        lam = holding[s]
        if lam <= 0.0:
            break
        h = -np.log(uniform(key, c)) / lam
        c += 1
        if clock_mask[s]:
            if clock + h >= horizon:
                break
            clock += h
        t += h
        s = _jump(indptr, indices, cumprob, s, uniform(key, c))
        c += 1
        if n == cap:
            cap *= 2
            nt = np.empty(cap)
            ns = np.empty(cap, dtype=np.int64)
            nt[:n] = times[:n]
            ns[:n] = states[:n]
            times = nt
            states = ns
        times[n] = t
        states[n] = s
        n += 1
    return times[:n].copy(), states[:n].copy()


@njit(cache=True, nogil=True)
def hitting_times(indptr, indices, cumprob, holding, starts, target, seed, first, max_jumps):
    """Hitting time of ``target`` for each start; ``-1`` if ``max_jumps`` ran out."""
    m = starts.size
    out = np.empty(m)
    for i in range(m):
        key = stream_key(seed, first + i)
        s = starts[i]
        t = 0.0
        c = 0
        done = target[s]
        while not done and c < 2 * max_jumps:
            t += -np.log(uniform(key, c)) / holding[s]
            c += 1
            s = _jump(indptr, indices, cumprob, s, uniform(key, c))
            c += 1
            done = target[s]
        out[i] = t if done else -1.0
    return out


@njit(cache=True, nogil=True)
def escape_hits(indptr, indices, cumprob, starts, stop, success, seed, first, max_jumps):
    """Embedded walk from each start (at least one step) until ``stop``.

    Returns 1 where the stopping state lies in ``success``, 0 otherwise and
    -1 if ``max_jumps`` ran out.
    """
    m = starts.size
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        key = stream_key(seed, first + i)
        s = _jump(indptr, indices, cumprob, starts[i], uniform(key, 0))
        c = 1
        while not stop[s] and c < max_jumps:
            s = _jump(indptr, indices, cumprob, s, uniform(key, c))
            c += 1
        if stop[s]:
            out[i] = 1 if success[s] else 0
        else:
            out[i] = -1
    return out


@njit(cache=True, nogil=True)
def labels_at_clock(indptr, indices, cumprob, holding, starts, label, clock_mask,
                    grid, seed, first):
    """Label of the clocked (trace) process at each clock time in ``grid``.

    ``grid`` must be sorted.  The clock advances only on ``clock_mask``; the
    recorded label is that of the state occupied when the clock passes each
    grid time.
    """
    m = starts.size
    k = grid.size
    out = np.empty((m, k), dtype=np.int64)
    for i in range(m):
        key = stream_key(seed, first + i)
        s = starts[i]
        clock = 0.0
        c = 0
        j = 0
        while j < k:
            h = -np.log(uniform(key, c)) / holding[s]
            c += 1
            if clock_mask[s]:
                while j < k and clock + h > grid[j]:
                    out[i, j] = label[s]
                    j += 1
                clock += h
            if j < k:
                s = _jump(indptr, indices, cumprob, s, uniform(key, c))
                c += 1
    return out


@njit(cache=True, nogil=True)
def occupation(indptr, indices, cumprob, holding, starts, mask, horizon, seed, first):
    """Time spent in ``mask`` during ``[0, horizon]`` for each start."""
    m = starts.size
    out = np.empty(m)
    for i in range(m):
        key = stream_key(seed, first + i)
        s = starts[i]
        t = 0.0
        acc = 0.0
        c = 0
        while t < horizon:
            h = -np.log(uniform(key, c)) / holding[s]
            c += 1
            h = min(h, horizon - t)
            if mask[s]:
                acc += h
            t += h
            if t < horizon:
                s = _jump(indptr, indices, cumprob, s, uniform(key, c))
                c += 1
        out[i] = acc
    return out


@njit(cache=True, nogil=True)
def integral_sup_sq(indptr, indices, cumprob, holding, starts, f, horizon, seed, first):
    """``sup_{t <= horizon} (int_0^t f(X_s) ds)**2`` for each start."""
    m = starts.size
    out = np.empty(m)
    for i in range(m):
        key = stream_key(seed, first + i)
        s = starts[i]
        t = 0.0
        acc = 0.0
        best = 0.0
        c = 0
        while t < horizon:
            h = -np.log(uniform(key, c)) / holding[s]
            c += 1
            h = min(h, horizon - t)
            acc += f[s] * h
            if acc * acc > best:
                best = acc * acc
            t += h
            if t < horizon:
                s = _jump(indptr, indices, cumprob, s, uniform(key, c))
                c += 1
        out[i] = best
    return out


@njit(cache=True, nogil=True)
def draw_states(cumweights, seed, first, m):
    """Draw ``m`` states from a measure given by its cumulative weights."""
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        # counter 2**62 keeps initial draws out of the path streams
        u = uniform(stream_key(seed, first + i), np.uint64(1) << np.uint64(62))
        k = np.searchsorted(cumweights, u, side="right")
        if k >= cumweights.size:
            k = cumweights.size - 1
        out[i] = k
    return out
