"""Equilibrium potentials, capacities and the quantities built from them.

Conventions
-----------
``V = equilibrium_potential(chain, A, B).values`` satisfies ``V = 1`` on A,
``V = 0`` on B and ``LV = 0`` elsewhere, so ``V(eta) = P_eta[H_A < H_B]``.
Capacities use the normalised stationary measure of the chain they are
computed on.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components
from scipy.stats import norm

from . import _kernels
from .chain import DENSE_SOLVE_LIMIT, as_index, dirichlet_form, indicator
from .errors import (
    DeltaNonempty,
    DimensionMismatch,
    EmptySubset,
    MeasureOffWell,
    NonpositiveGamma,
    NumericalError,
    OverlappingSets,
    ReducibleKilledChain,
    SolveFailure,
    StateInsideSets,
    TrialViolatesBoundary,
)
from .semigroup import killed_generator, propagate
from .transforms import Partition, enlarge_chain, trace_chain

__all__ = [
    "EquilibriumPotential",
    "CapacityResult",
    "MeanJumpRates",
    "QuasiStationary",
    "HittingProbability",
    "Enlargement",
    "equilibrium_potential",
    "capacity",
    "capacity_upper_bound",
    "capacity_monte_carlo",
    "well_exit_rate",
    "mean_jump_rates",
    "quasi_stationary",
    "hitting_prob_capacity_formula",
    "l4_bounds",
    "default_gamma",
]

# routes of the same capacity must agree to this relative precision
CAPACITY_RTOL = 1e-10
# relative size below which the three-capacity numerator counts as cancelled
CANCELLATION_RTOL = 1e-8


@dataclass(frozen=True)
class EquilibriumPotential:
    values: np.ndarray
    source: np.ndarray
    sink: np.ndarray


@dataclass(frozen=True)
class CapacityResult:
    """A capacity value and how it was obtained.

    ``method`` is ``"exact"``, ``"dirichlet-bound"`` or ``"monte-carlo"``.
    For exact results ``escape_value`` holds the independent escape-probability
    evaluation; Monte Carlo results carry a 95% confidence interval.
    """

    value: float
    method: str
    potential: Optional[EquilibriumPotential] = None
    escape_value: Optional[float] = None
    ci: Optional[tuple] = None
    n_paths: Optional[int] = None

    def __float__(self):
        return float(self.value)


def _pair(chain, A, B):
    A = as_index(chain, A)
    B = as_index(chain, B)
    if A.size == 0 or B.size == 0:
        raise EmptySubset("both sets must be nonempty")
    if np.intersect1d(A, B).size:
        raise OverlappingSets("sets must be disjoint")
    return A, B


def equilibrium_potential(chain, A, B):
    """Solve ``LV = 0`` off ``A u B`` with ``V = 1`` on A and ``V = 0`` on B."""
    A, B = _pair(chain, A, B)
    V = indicator(chain.n, A)
    mask = np.ones(chain.n, dtype=bool)
    mask[A] = False
    mask[B] = False
    inner = np.flatnonzero(mask)
    if inner.size:
        if chain.n <= DENSE_SOLVE_LIMIT:
            rows = chain.dense_generator[inner]
            M = -rows[:, inner]
            rhs = rows[:, A].sum(axis=1)
            try:
                sol = sla.solve(M, rhs, check_finite=False)
            except (sla.LinAlgError, ValueError) as exc:
                raise SolveFailure(f"potential system singular: {exc}") from exc
        else:
            rows = chain.generator[inner]
            M = (-rows[:, inner]).tocsc()
            rhs = np.asarray(rows[:, A].sum(axis=1)).ravel()
            try:
                sol = spla.splu(M).solve(rhs)
            except RuntimeError as exc:
                raise SolveFailure(f"potential system singular: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise SolveFailure("non-finite equilibrium potential")
        V[inner] = sol
        resid = rows @ V
        if np.max(np.abs(resid)) > 1e-8 * max(1.0, chain.max_rate):
            raise SolveFailure("equilibrium potential is not harmonic")
        np.clip(V, 0.0, 1.0, out=V)
    return EquilibriumPotential(V, A, B)


def _escape_sum(chain, A, B):
    # sum_{a in A} pi(a) lambda(a) P_a[H_B < H_A^+] from a separate solve
    W = equilibrium_potential(chain, B, A).values
    return float(np.dot(chain.pi[A], chain.rates[A] @ W))


def capacity(chain, A, B):
    """Exact capacity, evaluated as the energy of the equilibrium potential and
    independently as an escape-probability sum.
    """
    pot = equilibrium_potential(chain, A, B)
    energy = dirichlet_form(chain, pot.values)
    escape = _escape_sum(chain, pot.source, pot.sink)
    if abs(energy - escape) > CAPACITY_RTOL * max(abs(energy), abs(escape)) + 1e-300:
        raise NumericalError(f"capacity routes disagree: {energy!r} vs {escape!r}")
    return CapacityResult(energy, "exact", pot, escape)


def capacity_upper_bound(chain, A, B, trial):
    """Dirichlet-principle bound: the energy of any admissible trial function.

    ``trial`` must take one constant value in {0, 1} on A and the other on B.
    """
    A, B = _pair(chain, A, B)
    f = np.asarray(trial, dtype=float)
    if f.shape != (chain.n,):
        raise DimensionMismatch(f"trial has shape {f.shape}, chain has {chain.n} states")
    for a, b in ((0.0, 1.0), (1.0, 0.0)):
        if np.allclose(f[A], a, atol=1e-12) and np.allclose(f[B], b, atol=1e-12):
            break
    else:
        raise TrialViolatesBoundary("trial must equal 0 on one set and 1 on the other")
    return dirichlet_form(chain, f)


def capacity_monte_carlo(chain, A, B, n_paths=10_000, seed=0, max_jumps=10**8):
    """Escape-probability estimate of ``Cap(A, B)`` by the embedded jump chain.

    Starts are stratified over A proportionally to ``pi * lambda``; the
    reported interval is a 95% normal interval of the stratified estimator.
    Path ``k`` uses the random stream keyed by ``(seed, k)``.
    """
    A, B = _pair(chain, A, B)
    w = chain.pi[A] * chain.holding[A]
    Z = float(w.sum())
    share = w / Z * n_paths
    counts = np.floor(share).astype(np.int64)
    rest = n_paths - counts.sum()
    if rest > 0:
        counts[np.argsort(counts - share, kind="stable")[:rest]] += 1
    counts = np.maximum(counts, 1)
    starts = np.repeat(A.astype(np.int64), counts)
    stop = np.zeros(chain.n, dtype=np.bool_)
    stop[A] = True
    stop[B] = True
    success = np.zeros(chain.n, dtype=np.bool_)
    success[B] = True
    indptr, indices, cum = chain.jump_table
    hits = _kernels.escape_hits(indptr, indices, cum, starts, stop, success,
                                np.uint64(seed), 0, max_jumps)
    if np.any(hits < 0):
        raise NumericalError("escape walk exceeded the jump budget")
    bounds = np.concatenate([[0], np.cumsum(counts)])
    p = np.array([hits[bounds[i]:bounds[i + 1]].mean() for i in range(A.size)])
    frac = w / Z
    value = Z * float(np.dot(frac, p))
    se = Z * float(np.sqrt(np.sum(frac ** 2 * p * (1 - p) / counts)))
    z = norm.ppf(0.975)
    return CapacityResult(value, "monte-carlo", ci=(value - z * se, value + z * se),
                          n_paths=int(counts.sum()))


def well_exit_rate(chain, partition, x):
    """``E_{pi_x}[R(eta, rest)]``: mean rate of jumping from well x straight
    into the other wells, with ``pi_x`` the measure conditioned on the well.
    """
    W = partition.wells[x]
    out = indicator(chain.n, partition.others(x))
    p = chain.pi[W] / chain.pi[W].sum()
    return float(np.dot(p, chain.rates[W] @ out))


# -- enlargement ------------------------------------------------------------

class Enlargement:
    """Gamma-enlargement of a chain whose state space is the union of wells.

    Attributes
    ----------
    base : Chain
    partition : Partition
        Wells of ``base``; the separating set must be empty.
    chain : Chain
        The enlarged chain (stars appended after the base states).
    """

    def __init__(self, base, partition, gamma):
        if partition.n != base.n:
            raise DimensionMismatch("partition and chain sizes differ")
        if partition.delta.size:
            raise DeltaNonempty("wells must cover the state space; trace first")
        if not gamma > 0:
            raise NonpositiveGamma(f"gamma must be positive, got {gamma!r}")
        self.base = base
        self.partition = partition
        self.gamma = float(gamma)
        self.chain, self.index = enlarge_chain(base, gamma)

    def star(self, wells):
        """Star copies of the union of the given wells."""
        wells = np.atleast_1d(wells)
        return self.index.star_of(np.concatenate([self.partition.wells[x] for x in wells]))

    def capacity(self, wells_a, wells_b):
        """Capacity between star copies of two groups of wells."""
        return capacity(self.chain, self.star(wells_a), self.star(wells_b)).value

    def escape_form(self, wells_a, wells_b):
        """``(gamma/2) sum_{a-wells} pi_E(eta) P_eta[H_{b-stars} < H_{a-stars}]``."""
        pa = self.star(wells_a)
        pb = self.star(wells_b)
        V = equilibrium_potential(self.chain, pb, pa).values
        orig = np.concatenate([self.partition.wells[x] for x in np.atleast_1d(wells_a)])
        return 0.5 * self.gamma * float(np.dot(self.base.pi[orig], V[orig]))


def default_gamma(trace, partition):
    """Geometric mean of the trace gap and the smallest reflected gap."""
    from .spectral import spectral_gap
    from .transforms import reflect_chain

    gE = spectral_gap(trace).gap
    gr = min(spectral_gap(reflect_chain(trace, w)).gap for w in partition.wells)
    if not np.isfinite(gr):
        return gE * 1e3
    return float(np.sqrt(gE * gr))


@dataclass(frozen=True)
class MeanJumpRates:
    """Average jump rates between star wells.

    ``rates[x, y]`` for ``x != y``; the diagonal is zero.  ``star_capacities[x]``
    is the capacity between the star copy of well x and the other star wells.
    """

    rates: np.ndarray
    gamma: float
    partition: Partition
    star_capacities: np.ndarray
    row_identity_error: float
    pair_identity_error: float


def mean_jump_rates(chain, partition, gamma=None):
    """Mean jump rates of the enlarged trace process between star wells.

    ``chain`` must live on the union of the wells (a trace chain).  Each
    ``r(x, y)`` is obtained from the potential of the star copy of well y
    against the other star wells; the result is cross-checked against the
    pairwise star-capacity identity.
    """
    if partition.delta.size:
        raise DeltaNonempty("mean jump rates need a chain living on the wells")
    if gamma is None:
        gamma = default_gamma(chain, partition)
    enl = Enlargement(chain, partition, gamma)
    k = partition.kappa
    mass = np.array([chain.pi[w].sum() for w in partition.wells])
    r = np.zeros((k, k))
    for y in range(k):
        rest = [z for z in range(k) if z != y]
        V = equilibrium_potential(enl.chain, enl.star(y), enl.star(rest)).values
        for x in rest:
            W = partition.wells[x]
            r[x, y] = enl.gamma * float(np.dot(chain.pi[W], V[W])) / mass[x]

    caps = np.array([enl.capacity(x, [z for z in range(k) if z != x]) for x in range(k)])
    scale = max(1e-300, float(caps.max()))
    row_err = float(np.max(np.abs(0.5 * mass * r.sum(axis=1) - caps)))

    pair_err = 0.0
    for x in range(k):
        for y in range(x + 1, k):
            rest = [z for z in range(k) if z not in (x, y)]
            joint = enl.capacity([x, y], rest) if rest else 0.0
            rhs = 0.5 * (caps[x] + caps[y] - joint)
            pair_err = max(pair_err,
                           abs(0.5 * mass[x] * r[x, y] - rhs),
                           abs(0.5 * mass[y] * r[y, x] - rhs))
    if max(row_err, pair_err) > CAPACITY_RTOL * scale:
        raise NumericalError(
            f"star-capacity cross-check failed (row {row_err:.2e}, pair {pair_err:.2e})"
        )
    return MeanJumpRates(r, enl.gamma, partition, caps, row_err, pair_err)


# -- quasi-stationary measures ---------------------------------------------

@dataclass(frozen=True)
class QuasiStationary:
    """Principal left eigenpair of the generator killed on leaving a well.

    ``measure[k]`` is the mass of ``well[k]``.  ``exit_bound`` is the mean
    exit rate of the well under the conditioned stationary measure, which
    dominates ``rate``.
    """

    well: np.ndarray
    measure: np.ndarray
    rate: float
    iterations: int
    exit_bound: float

    def survival(self, t):
        return float(np.exp(-self.rate * t))


def quasi_stationary(chain, well, *, tol=1e-12, max_iter=10_000):
    """Quasi-stationary measure and exit rate of ``well``.

    Inverse power iteration on the transposed killed generator; falls back
    to a dense eigensolve when the iteration stalls.
    """
    W = as_index(chain, well)
    if W.size == 0:
        raise EmptySubset("well is empty")
    if W.size == chain.n:
        raise ReducibleKilledChain("nothing to exit to: the well is the whole space")
    ncomp, comp = connected_components(chain.rates[W][:, W], directed=True,
                                       connection="strong")
    if ncomp > 1:
        raise ReducibleKilledChain(
            f"killed chain has {ncomp} classes",
            [W[comp == c].tolist() for c in range(ncomp)],
        )
    Q = killed_generator(chain, W)
    out = indicator(chain.n, W) == 0
    exit_rates = np.asarray(chain.rates[W][:, out].sum(axis=1)).ravel()
    p = chain.pi[W] / chain.pi[W].sum()
    bound = float(np.dot(p, exit_rates))

    if W.size == 1:
        rho = float(exit_rates[0])
        return QuasiStationary(W, np.ones(1), rho, 0, bound)

    lu = spla.splu((-Q).T.tocsc())
    x = p.copy()
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        y = lu.solve(x)
        y /= y.sum()
        if np.abs(y - x).sum() <= tol:
            x = y
            converged = True
            break
        x = y
    if not converged or x.min() < -1e-14:
        vals, vecs = sla.eig((-Q).T.toarray())
        k = int(np.argmin(vals.real))
        x = np.abs(vecs[:, k].real)
        x /= x.sum()
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    phi = float(x @ (-Q @ np.ones(W.size)))
    return QuasiStationary(W, x, phi, it, bound)


# -- hitting probabilities ----------------------------------------------------

@dataclass(frozen=True)
class HittingProbability:
    """``P_eta[H_B < H_A]`` from the three-capacity identity.

    Iterating yields ``(exact, bound)``.
    """

    exact: float
    bound: float
    potential_value: float
    identity_value: float
    ill_conditioned: bool

    def __iter__(self):
        return iter((self.exact, self.bound))


def hitting_prob_capacity_formula(chain, eta, A, B):
    """``P_eta[H_B < H_A]`` through capacities, with the capacity-ratio bound."""
    A, B = _pair(chain, A, B)
    eta = int(eta)
    if eta in set(A.tolist()) | set(B.tolist()):
        raise StateInsideSets(f"state {eta} lies in A or B")
    e = np.array([eta])
    AB = np.union1d(A, B)
    c_eta = capacity(chain, e, AB).value
    c_b = capacity(chain, B, np.union1d(A, e)).value
    c_a = capacity(chain, A, np.union1d(B, e)).value
    num = c_eta + c_b - c_a
    via_identity = num / (2 * c_eta)
    via_potential = float(equilibrium_potential(chain, B, A).values[eta])
    ill = abs(num) < CANCELLATION_RTOL * max(c_eta, c_b, c_a)
    if not ill and abs(via_identity - via_potential) > 1e-8:
        raise NumericalError(
            f"capacity identity {via_identity!r} disagrees with potential {via_potential!r}"
        )
    exact = via_potential if ill else via_identity
    bound = capacity(chain, e, B).value / c_eta
    return HittingProbability(exact, bound, via_potential, via_identity, bool(ill))


# -- early-exit bounds --------------------------------------------------------

@dataclass(frozen=True)
class L4Report:
    """Bounds on the probability of leaving well x before time ``1/gamma``.

    Attributes
    ----------
    W : ndarray
        Potential of the other wells against the star copy of well x, on
        the states of well x (``W[k]`` belongs to ``well[k]``).
    exact : float
        ``P_nu[H_rest <= 1/gamma]`` for the trace process.
    potential_bound : float
        ``e * E_nu[W]``.
    lower : dict
        ``A -> (E_nu[W] - e^-A / (1 - e^-A), P_nu[H_rest <= A/gamma])``.
    l2_bound : float
        Bound on the probability from the density of ``nu`` and a star capacity.
    capacity_ratio_bound : float
        ``sum_eta nu(eta) e Cap(eta, rest) / (2 Cap*(eta, star x))``.
    """

    x: int
    gamma: float
    well: np.ndarray
    W: np.ndarray
    exact: float
    potential_bound: float
    lower: dict
    l2_bound: float
    capacity_ratio_bound: float

    @property
    def margins(self):
        low = min(p - lo for lo, p in self.lower.values())
        return {
            "potential": self.potential_bound - self.exact,
            "lower": low,
            "l2": self.l2_bound - self.exact,
            "capacity_ratio": self.capacity_ratio_bound - self.exact,
        }

    @property
    def ok(self):
        return all(m >= -1e-10 for m in self.margins.values())


def _exit_by(trace, well, nu_w, t):
    # P_nu[H_rest <= t] for the trace process started in the well
    Q = killed_generator(trace, well)
    surv = propagate(Q, nu_w, t, side="left").sum()
    return float(1.0 - surv)


def l4_bounds(chain, partition, x, gamma, nu, A_values=(1.0, 2.0, 4.0)):
    """Bounds on early exits from well ``x``, each checked against the exact
    exit probability of the trace process.

    Parameters
    ----------
    chain : Chain
        The original chain; the trace on the wells is formed internally.
    partition : Partition
        Wells of ``chain``.
    nu : array_like, shape (n,)
        Initial distribution, supported on well ``x``.
    """
    if not gamma > 0:
        raise NonpositiveGamma(f"gamma must be positive, got {gamma!r}")
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (chain.n,):
        raise DimensionMismatch("nu must be a measure on the chain's states")
    well = partition.wells[x]
    off = np.ones(chain.n, dtype=bool)
    off[well] = False
    if np.any(nu[off] > 1e-14):
        raise MeasureOffWell(f"nu charges states outside well {x}")
    nu = nu / nu.sum()

    trace = trace_chain(chain, partition.union)
    tp = partition.on_union()
    tw = tp.wells[x]
    rest = tp.others(x)
    nu_w = nu[well]  # well and tw list the same states in the same order
    enl = Enlargement(trace, tp, gamma)

    # potential between the other wells (and their stars) and the star of x
    W = equilibrium_potential(enl.chain, np.concatenate([rest, enl.star(
        [z for z in range(tp.kappa) if z != x])]), enl.star(x)).values[tw]
    EW = float(np.dot(nu_w, W))
    exact = _exit_by(trace, tw, nu_w, 1.0 / gamma)
    lower = {}
    for A in A_values:
        p = _exit_by(trace, tw, nu_w, A / gamma)
        lower[float(A)] = (EW - np.exp(-A) / (1 - np.exp(-A)), p)

    pi_w = trace.pi[tw]
    density2 = float(np.sum(nu_w ** 2 / pi_w))
    cap_star = capacity(enl.chain, enl.star(x), rest).value
    l2 = float(np.sqrt(2 * np.e ** 2 / gamma * density2 * cap_star))

    # capacity ratio through the chain enlarged on the wells only
    big, idx = enlarge_chain(chain, gamma, partition.union)
    scale = (1 + chain.pi[partition.union].sum()) / 2
    others = partition.others(x)
    star_x = idx.star_of(well)
    ratio = np.empty(well.size)
    for k, eta in enumerate(well):
        e = np.array([eta])
        num = capacity(chain, e, others).value
        den = capacity(big, e, star_x).value * scale
        ratio[k] = np.e * num / (2 * den)
    cr = float(np.dot(nu_w, ratio))
    return L4Report(x, float(gamma), well, W, exact, float(np.e * EW), lower, l2, cr)
