import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metastab.chain import build_chain, dirichlet_form
from metastab.errors import BadSplit, NonzeroMean
from metastab.models import (
    DogGraphSpec,
    PolymerSpec,
    birth_death,
    dog_graph,
    polymer,
    random_reversible,
    random_wells,
    two_state,
)
from metastab.spectral import (
    gap_sandwich,
    gap_upper_bound_capacity,
    harmonic_extension,
    hminus1_norm,
    mixing_profile,
    spectral_gap,
    split_hminus1_norm,
)
from metastab.transforms import reflect_chain, trace_chain

from . import oracles
from .strategies import chain_with_split, chains

PATH3 = birth_death([1.0, 1.0])


# -- spectral gap -------------------------------------------------------------

@pytest.mark.parametrize("a,b", [(2.0, 3.0), (1.0, 1.0), (0.01, 5.0)])
def test_two_state_gap_and_eigenfunction(a, b):
    res = spectral_gap(two_state(a, b))
    assert res.gap == pytest.approx(a + b, rel=1e-12)
    f = np.array([-np.sqrt(a / b), np.sqrt(b / a)])
    np.testing.assert_allclose(res.eigenfunction, f, rtol=1e-10)
    assert res.residual <= 1e-8


@pytest.mark.parametrize("n", [3, 6, 10])
def test_complete_graph_gap(n):
    R = np.ones((n, n)) - np.eye(n)
    assert spectral_gap(build_chain(R)).gap == pytest.approx(n, rel=1e-12)


def test_dog_gap_scaling_bounded():
    scaled = []
    for N in (4, 8, 16, 32):
        c, _ = dog_graph(DogGraphSpec(N))
        scaled.append(spectral_gap(c).gap * N ** 2 * np.log(N))
    assert max(scaled) / min(scaled) <= 3.0


@given(chains())
def test_gap_matches_eigvals(c):
    res = spectral_gap(c)
    assert res.gap == pytest.approx(oracles.spectral_gap(c), rel=1e-9)
    f = res.eigenfunction
    assert abs(np.dot(c.pi, f)) <= 1e-10
    assert np.dot(c.pi, f * f) == pytest.approx(1.0, abs=1e-10)


@given(chains())
def test_symmetrized_operator_symmetric(c):
    s = np.sqrt(c.pi)
    S = s[:, None] * -oracles.generator(c) / s[None, :]
    assert np.max(np.abs(S - S.T)) <= 1e-12 * max(1.0, c.max_rate)


# -- sandwich and capacity bound ----------------------------------------------

def test_sandwich_full_space():
    c = random_reversible(10, seed=0)
    s = gap_sandwich(c, np.arange(10))
    assert s.gap == pytest.approx(s.gap_trace, rel=1e-12)
    assert s.correction == 0.0


def test_sandwich_random_small_delta():
    found = 0
    for seed in range(40):
        c = random_reversible(20, seed=seed, sparsity=0.3)
        order = np.argsort(c.pi)
        cum = np.cumsum(c.pi[order])
        delta = order[cum <= 0.05]
        if delta.size == 0:
            continue
        found += 1
        s = gap_sandwich(c, np.setdiff1d(np.arange(c.n), delta))
        assert s.ok, (s.upper_slack, s.lower_slack)
    assert found >= 5


def test_sandwich_polymer():
    c, part = polymer(PolymerSpec(4))
    s = gap_sandwich(c, part.union)
    assert s.lower <= s.gap <= s.gap_trace * (1 + 1e-12)
    assert 0 < s.gap / s.gap_trace <= 1 + 1e-12


@given(chain_with_split())
def test_gap_below_trace_gap(data):
    c, A, _ = data
    s = gap_sandwich(c, A)
    assert s.upper_slack >= -1e-10 * max(1.0, s.gap_trace)


@pytest.mark.parametrize("a,b", [(2.0, 3.0), (0.5, 0.5)])
def test_capacity_bound_tight_two_state(a, b):
    c = two_state(a, b)
    assert gap_upper_bound_capacity(c, [0]) == pytest.approx(a + b, rel=1e-12)


def test_capacity_bound_random_splits():
    rng = np.random.default_rng(1)
    for k in range(50):
        c = random_reversible(int(rng.integers(3, 15)), seed=100 + k, sparsity=0.4)
        E = np.sort(rng.choice(c.n, int(rng.integers(2, c.n + 1)), replace=False))
        A = E[: int(rng.integers(1, E.size))]
        bound = gap_upper_bound_capacity(c, A, E, check=True)
        assert bound >= spectral_gap(trace_chain(c, E)).gap * (1 - 1e-10)


def test_capacity_bound_bad_split():
    with pytest.raises(BadSplit):
        gap_upper_bound_capacity(PATH3, [0, 1, 2])
    with pytest.raises(BadSplit):
        gap_upper_bound_capacity(PATH3, [1], [0, 2])


def test_dog_capacity_bound_scaling():
    scaled = []
    for N in (4, 8, 16):
        c, part = dog_graph(DogGraphSpec(N))
        A, B = part.wells
        E = np.union1d(A, B)
        bound = gap_upper_bound_capacity(c, A, E)
        assert bound >= spectral_gap(trace_chain(c, E)).gap * (1 - 1e-10)
        scaled.append(bound * N ** 2 * np.log(N))
    assert max(scaled) / min(scaled) <= 3.0


# -- harmonic extension ---------------------------------------------------------

def test_extension_of_constant():
    c = random_reversible(8, seed=2)
    F = harmonic_extension(c, [0, 3, 5], [2.0, 2.0, 2.0])
    np.testing.assert_allclose(F, 2.0, atol=1e-13)
    assert dirichlet_form(c, F) == pytest.approx(0.0, abs=1e-13)


def test_extension_path():
    F = harmonic_extension(PATH3, [0, 2], [1.0, 0.0])
    np.testing.assert_allclose(F, [1.0, 0.5, 0.0], atol=1e-14)
    assert dirichlet_form(PATH3, F) == pytest.approx(1 / 6, abs=1e-14)
    trace = trace_chain(PATH3, [0, 2])
    assert (2 / 3) * dirichlet_form(trace, [1.0, 0.0]) == pytest.approx(1 / 6, abs=1e-14)


@given(chain_with_split(n_min=4), st.integers(0, 2**32 - 1))
def test_extension_minimal(data, seed):
    c, A, _ = data
    if A.size == c.n:
        return
    rng = np.random.default_rng(seed)
    F = harmonic_extension(c, A, rng.normal(size=A.size))
    off = np.setdiff1d(np.arange(c.n), A)
    G = F.copy()
    G[off] += rng.normal(size=off.size) * 0.1
    assert dirichlet_form(c, G) > dirichlet_form(c, F)


# -- mixing -------------------------------------------------------------------

def test_mixing_two_state():
    prof = mixing_profile(two_state(1.0, 1.0))
    np.testing.assert_allclose(prof.d, 0.5 * np.exp(-2 * prof.times), atol=1e-10)
    assert prof.t_mix[0.25] == pytest.approx(0.5 * np.log(2), rel=1e-6)
    assert prof.t_mix[0.25] <= 0.5 * np.log(4) + 1e-9
    assert prof.bound_ok


def test_mixing_matches_expm_and_is_monotone():
    c = random_reversible(12, seed=4, sparsity=0.4)
    prof = mixing_profile(c, (0.1, 0.25))
    assert np.all(np.diff(prof.d) <= 1e-12)
    assert prof.d[0] == pytest.approx(1 - c.pi.min(), abs=1e-15)
    for t, d in zip(prof.times[::5], prof.d[::5]):
        assert d == pytest.approx(oracles.tv_worst(c, t), abs=1e-10)
        assert oracles.tv_worst(c, 2 * t) <= 2 * d * d + 1e-10
    assert prof.t_mix[0.1] >= prof.t_mix[0.25]
    assert prof.bound_ok


def test_mixing_zero_at_initial_distance():
    c = random_reversible(5, seed=0)
    eps = 1 - c.pi.min()
    assert mixing_profile(c, (eps,)).t_mix[eps] == 0.0


def test_reflected_quadrant_mixing_quadratic():
    scaled = []
    for N in (4, 8, 16):
        c, _ = dog_graph(DogGraphSpec(N, alpha=0.5))
        Q = [i for i, v in enumerate(c.labels) if min(v) >= 0]
        scaled.append(mixing_profile(reflect_chain(c, Q)).t_mix[0.25] / N ** 2)
    assert max(scaled) / min(scaled) <= 2.0


# -- H_{-1} norms ---------------------------------------------------------------

def test_hminus1_eigenfunction():
    c = random_reversible(15, seed=6)
    res = spectral_gap(c)
    assert hminus1_norm(c, res.eigenfunction) == pytest.approx(1 / res.gap, rel=1e-9)


def test_hminus1_two_state():
    assert hminus1_norm(two_state(1, 1), [-1.0, 1.0]) == pytest.approx(0.5, abs=1e-14)


def test_hminus1_nonzero_mean():
    with pytest.raises(NonzeroMean):
        hminus1_norm(two_state(1, 1), [1.0, 1.0])


@given(chains(), st.integers(0, 2**32 - 1), st.floats(-5, 5))
def test_hminus1_is_a_norm(c, seed, a):
    rng = np.random.default_rng(seed)
    f, g = rng.normal(size=(2, c.n))
    f -= np.dot(c.pi, f)
    g -= np.dot(c.pi, g)
    nf, ng, nfg = (np.sqrt(hminus1_norm(c, h)) for h in (f, g, f + g))
    assert nfg <= nf + ng + 1e-10 * (1 + nf + ng)
    assert np.sqrt(hminus1_norm(c, a * f)) == pytest.approx(abs(a) * nf, rel=1e-8, abs=1e-10)


def test_split_norm_dominates():
    for seed in range(10):
        c = random_reversible(16, seed=seed, sparsity=0.35)
        part = random_wells(c, 2, seed=seed)
        trace = trace_chain(c, part.union)
        tp = part.on_union()
        rng = np.random.default_rng(seed)
        f = np.zeros(trace.n)
        for w in tp.wells:
            if w.size > 1:
                v = rng.normal(size=w.size)
                f[w] = v - np.dot(trace.pi[w], v) / trace.pi[w].sum()
        assert hminus1_norm(trace, f) <= split_hminus1_norm(trace, tp, f) * (1 + 1e-10)
