"""Finite-family diagnostics for metastable behaviour.

Asymptotic hypotheses can only be judged as trends over a family of
chains indexed by a size parameter ``N``.  Every verdict is returned with
the numbers behind it and the thresholds used (:class:`Thresholds`).
"""
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (
    BadPartition,
    DivergentRates,
    FamilyTooSmall,
    IncompatiblePartitions,
)
from .potential import Enlargement, capacity, mean_jump_rates, well_exit_rate
from .semigroup import integrate, killed_generator, propagate
from .spectral import mixing_profile, spectral_gap
from .transforms import Partition, enlarge_chain, reflect_chain, trace_chain

__all__ = [
    "Thresholds",
    "ChainFamily",
    "Trend",
    "ConditionReport",
    "LimitChain",
    "TwoValleyReport",
    "CesaroReport",
    "check_conditions",
    "predict_limit_chain",
    "two_valley_ratio",
    "cesaro_occupation",
    "limit_semigroup",
    "limit_integral",
    "auto_gamma",
    "original_reflected_gaps",
]

SATISFIED = "satisfied-trend"
VIOLATED = "violated-trend"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class Thresholds:
    """Judgment calls behind the trend verdicts.

    vanish_factor, vanish_last
        A quantity that should tend to zero must shrink by ``vanish_factor``
        over the family and end below ``vanish_last``.
    stable_change
        A quantity that should converge must change by at most this fraction
        of its largest entry between the last two members.
    bounded_growth, bounded_violation
        A quantity that should stay bounded may grow by ``bounded_growth``;
        monotone growth beyond ``bounded_violation`` counts as divergence.
    """

    vanish_factor: float = 2.0
    vanish_last: float = 0.2
    stable_change: float = 0.1
    bounded_growth: float = 2.0
    bounded_violation: float = 4.0


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class Trend:
    """A per-member sequence with its verdict."""

    name: str
    kind: str
    values: list
    verdict: str

    def as_dict(self):
        return {"name": self.name, "kind": self.kind, "values": self.values,
                "verdict": self.verdict}


def _vanishing(values, th):
    v = np.asarray(values, dtype=float)
    # exact zeros (one-state wells) hold trivially and carry no scaling information
    v = v[v > 0]
    if v.size < 3:
        return INCONCLUSIVE
    first, last = v[0], v[-1]
    if last <= first / th.vanish_factor and last < th.vanish_last:
        return SATISFIED
    if last > 1.1 * first:
        return VIOLATED
    return INCONCLUSIVE


def _stabilizing(values, th):
    v = np.asarray(values, dtype=float)
    v = v.reshape(v.shape[0], -1)
    # change measured against each member's largest entry, so entries
    # drifting to zero count as settling
    scale = np.maximum(np.abs(v[1:]).max(axis=1), 1e-300)
    change = np.abs(np.diff(v, axis=0)).max(axis=1) / scale
    if change[-1] <= th.stable_change:
        return SATISFIED
    if change.size > 1 and change[-1] > change[0]:
        return VIOLATED
    return INCONCLUSIVE


def _bounded(values, th):
    v = np.asarray(values, dtype=float)
    growth = v[-1] / max(v[0], 1e-300)
    if growth <= th.bounded_growth:
        return SATISFIED
    if growth > th.bounded_violation and np.all(np.diff(v) > 0):
        return VIOLATED
    return INCONCLUSIVE


_JUDGES = {"vanish": _vanishing, "stabilize": _stabilizing, "bounded": _bounded}


@dataclass
class ChainFamily:
    """Chains indexed by an increasing size parameter, all with ``kappa`` wells.

    ``members`` is a list of ``(N, chain, partition)``.  ``theta`` optionally
    fixes the time scale per member.
    """

    members: list
    theta: list = None

    def __post_init__(self):
        params = [m[0] for m in self.members]
        if any(b <= a for a, b in zip(params, params[1:])):
            raise IncompatiblePartitions("family parameters must increase strictly")
        kappas = {m[2].kappa for m in self.members}
        if len(kappas) > 1:
            raise IncompatiblePartitions(f"members disagree on the number of wells: {kappas}")
        for N, chain, part in self.members:
            if part.n != chain.n:
                raise IncompatiblePartitions(f"partition of member N={N} has the wrong size")
        if self.theta is not None and len(self.theta) != len(self.members):
            raise IncompatiblePartitions("one time scale per member is required")

    @property
    def params(self):
        return [m[0] for m in self.members]

    @property
    def kappa(self):
        return self.members[0][2].kappa

    def __len__(self):
        return len(self.members)


def original_reflected_gaps(chain, partition):
    """Gaps of ``chain`` reflected at each well; ``inf`` for one-state wells."""
    return np.array([spectral_gap(reflect_chain(chain, w)).gap for w in partition.wells])


def auto_gamma(gap_trace, reflected, trace=None):
    """Geometric mean of the trace gap and the smallest reflected gap.

    When every well is a single state the reflected gaps are infinite; the
    largest holding rate of the trace chain then stands in for them.
    """
    upper = float(np.min(reflected))
    if not np.isfinite(upper):
        if trace is None:
            raise ValueError("finite reflected gap or trace chain required")
        upper = float(trace.holding.max())
    return float(np.sqrt(gap_trace * upper))


# -- two valleys ------------------------------------------------------------

@dataclass(frozen=True)
class TwoValleyReport:
    """Normalised star capacity against the trace gap for two wells.

    ``ratio = Cap*(A*, B*) / (gap_trace pi_E(A) pi_E(B))``; the sandwich
    reads ``lower <= middle <= upper`` with ``middle = 2 ratio``.
    """

    gamma: float
    star_capacity: float
    gap_trace: float
    mass_a: float
    mass_b: float
    reflected: tuple
    ratio: float
    lower: float
    middle: float
    upper: float

    @property
    def ok(self):
        tol = 1e-10 * max(1.0, self.middle)
        return self.lower <= self.middle + tol and self.middle <= self.upper + tol


def two_valley_ratio(chain, A, B, gamma="auto", *, reflected=None):
    """Star capacity between two wells relative to the gap of the trace on them.

    ``chain`` is the original chain; it is traced on ``A u B``.  Reflected
    gaps are those of ``chain`` at A and at B.
    """
    part = Partition(chain.n, (A, B))
    if reflected is None:
        reflected = original_reflected_gaps(chain, part)
    trace = trace_chain(chain, part.union)
    tp = part.on_union()
    gE = spectral_gap(trace).gap
    if isinstance(gamma, str):
        if gamma != "auto":
            raise BadPartition(f"unknown gamma rule {gamma!r}")
        gamma = auto_gamma(gE, reflected, trace)
    enl = Enlargement(trace, tp, gamma)
    cap = enl.capacity(0, 1)
    ma = float(trace.pi[tp.wells[0]].sum())
    mb = float(trace.pi[tp.wells[1]].sum())
    chat = cap / (ma * mb)
    lower = (1.0 - 2.0 * chat / gamma) ** 2
    upper = 1.0 + (gamma + 2.0 * chat) / float(np.min(reflected))
    return TwoValleyReport(float(gamma), cap, gE, ma, mb, tuple(map(float, reflected)),
                           chat / gE, lower, 2.0 * chat / gE, upper)


# -- limit chain ------------------------------------------------------------

@dataclass(frozen=True)
class LimitChain:
    """Rates of the limiting chain on the well labels.

    ``raw`` holds the rescaled rates of every family member (shape
    ``(members, kappa, kappa)``) and ``params`` their size parameters.
    """

    rates: np.ndarray
    raw: np.ndarray = None
    params: tuple = ()
    extrapolated: bool = False

    @classmethod
    def from_rates(cls, rates):
        r = np.array(rates, dtype=float)
        np.fill_diagonal(r, 0.0)
        if np.any(r < 0):
            raise DivergentRates("limit rates must be nonnegative")
        return cls(r)

    @property
    def kappa(self):
        return self.rates.shape[0]

    @property
    def generator(self):
        return self.rates - np.diag(self.rates.sum(axis=1))


def limit_semigroup(limit, t):
    """Transition matrix ``exp(t Q)`` of the limit chain."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    P = sla.expm(t * limit.generator)
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
        P /= P.sum(axis=1, keepdims=True)
    return P


def limit_integral(limit, t):
    """``int_0^t exp(sQ) ds`` through the exponential of a block matrix."""
    k = limit.kappa
    M = np.zeros((2 * k, 2 * k))
    M[:k, :k] = limit.generator
    M[:k, k:] = np.eye(k)
    return sla.expm(t * M)[:k, k:]


def _richardson(params, values):
    h = 1.0 / np.asarray(params[-3:], dtype=float)
    v = np.asarray(values[-3:], dtype=float)
    V = np.vander(h, 3)
    coef = np.linalg.solve(V, v.reshape(3, -1))
    return coef[-1].reshape(v.shape[1:])


def _member_rates(chain, part, theta):
    trace = trace_chain(chain, part.union)
    tp = part.on_union()
    gE = spectral_gap(trace).gap
    refl = original_reflected_gaps(chain, part)
    gamma = auto_gamma(gE, refl, trace)
    th = 1.0 / gE if theta is None else float(theta)
    return th * mean_jump_rates(trace, tp, gamma).rates


def predict_limit_chain(family, theta=None, *, thresholds=DEFAULT_THRESHOLDS):
    """Extrapolate ``theta_N r_N(x, y)`` to ``N = infinity``.

    Quadratic extrapolation in ``1/N`` through the last three members; with
    fewer members the last raw value is returned unextrapolated.  ``theta``
    defaults to the inverse trace gap, which is only meaningful for two wells.
    """
    theta = theta if theta is not None else family.theta
    if theta is None and family.kappa > 2:
        raise ValueError("time scales must be supplied for more than two wells")
    raw = np.array([
        _member_rates(c, p, None if theta is None else theta[k])
        for k, (_, c, p) in enumerate(family.members)
    ])
    if len(family) < 3:
        return LimitChain(raw[-1], raw, tuple(family.params), False)
    if _stabilizing(raw, thresholds) == VIOLATED:
        raise DivergentRates("rescaled rates do not settle along the family")
    r = _richardson(family.params, raw)
    r = np.clip(r, 0.0, None)
    np.fill_diagonal(r, 0.0)
    return LimitChain(r, raw, tuple(family.params), True)


# -- Cesaro occupation --------------------------------------------------------

@dataclass(frozen=True)
class CesaroReport:
    """Time-averaged well occupations against the limit chain, per well."""

    t: float
    theta: float
    start: int
    chain_side: np.ndarray
    limit_side: np.ndarray

    @property
    def discrepancy(self):
        return np.abs(self.chain_side - self.limit_side)


def _start_well(partition, nu):
    for x, w in enumerate(partition.wells):
        if abs(nu[w].sum() - 1.0) < 1e-12:
            return x
    raise BadPartition("initial measure must be concentrated on one well")


def cesaro_occupation(chain, partition, nu, theta, t, limit):
    """``int_0^t (nu S(theta r))(E^x) dr`` next to its limit-chain counterpart."""
    nu = np.asarray(nu, dtype=float)
    x0 = _start_well(partition, nu)
    k = partition.kappa
    if t == 0:
        return CesaroReport(0.0, float(theta), x0, np.zeros(k), np.zeros(k))
    occ = integrate(chain.generator, nu, theta * t, side="left") / theta
    lhs = np.array([occ[w].sum() for w in partition.wells])
    rhs = limit_integral(limit, t)[x0]
    return CesaroReport(float(t), float(theta), x0, lhs, rhs)


# -- condition report ---------------------------------------------------------

@dataclass
class ConditionReport:
    params: list
    theta: list
    trends: dict
    thresholds: Thresholds
    extra: dict = field(default_factory=dict)

    def verdicts(self):
        return {k: t.verdict for k, t in self.trends.items()}

    def as_dict(self):
        return {
            "params": self.params,
            "theta": self.theta,
            "thresholds": asdict(self.thresholds),
            "trends": {k: t.as_dict() for k, t in self.trends.items()},
            "extra": self.extra,
        }


def _l4_surrogate(chain, part, x, T):
    # capacity-ratio bound on leaving well x before T, per starting state
    gamma = 1.0 / T
    big, idx = enlarge_chain(chain, gamma, part.union)
    scale = (1 + chain.pi[part.union].sum()) / 2
    others = part.others(x)
    well = part.wells[x]
    star = idx.star_of(well)
    vals = np.empty(well.size)
    for k, eta in enumerate(well):
        e = np.array([eta])
        vals[k] = np.e * capacity(chain, e, others).value / (
            2 * scale * capacity(big, e, star).value)
    return vals


def check_conditions(family, nu=None, x0=0, *, thresholds=DEFAULT_THRESHOLDS):
    """Evaluate the hypotheses of the convergence theorems along a family.

    Parameters
    ----------
    family : ChainFamily
    nu : callable, optional
        ``nu(N, chain, partition) -> measure``; defaults to the stationary
        measure conditioned on well ``x0``.
    x0 : int
        Starting well.
    """
    if len(family) < 3:
        raise FamilyTooSmall(f"need at least 3 members, got {len(family)}")
    rows = {k: [] for k in ("l1_gap", "l1_rates", "l2g", "l2", "l3", "c43", "l4",
                            "l4u", "l4_exact", "mixing")}
    thetas = []
    extra = {"gap_trace": [], "reflected_gaps": [], "T": [], "t_mix": [], "gamma": []}
    for k, (N, chain, part) in enumerate(family.members):
        trace = trace_chain(chain, part.union)
        tp = part.on_union()
        gE = spectral_gap(trace).gap
        refl = original_reflected_gaps(chain, part)
        theta = 1.0 / gE if family.theta is None else float(family.theta[k])
        thetas.append(theta)
        gamma = auto_gamma(gE, refl, trace)
        r = mean_jump_rates(trace, tp, gamma).rates

        if nu is None:
            m = np.zeros(chain.n)
            w = part.wells[x0]
            m[w] = chain.pi[w] / chain.pi[w].sum()
        else:
            m = np.asarray(nu(N, chain, part), dtype=float)
        mE = m[part.union]
        piE = trace.pi
        masses = np.array([piE[w].sum() for w in tp.wells])
        M = np.minimum(masses, 1.0 - masses)
        pis = np.array([chain.pi[w].sum() for w in part.wells])

        rows["l1_gap"].append(float(1.0 / (theta * refl.min())))
        rows["l1_rates"].append((theta * r).tolist())
        rows["l2g"].append(float(np.sum(mE ** 2 / piE) * M.max()))
        rows["l2"].append(float(min(np.max(np.delete(pis, x)) for x in range(len(pis))) / pis.min()))
        rows["l3"].append(float(chain.pi[part.delta].sum() / pis.min()))
        rows["c43"].append(float(theta * well_exit_rate(trace, tp, x0)))

        tmix = max(
            mixing_profile(reflect_chain(chain, w)).t_mix[0.25] if w.size > 1 else 0.0
            for w in part.wells
        )
        # one-state wells mix instantly; the fastest trace holding time stands in
        floor = 1.0 / refl.min() if np.isfinite(refl.min()) else 1.0 / trace.holding.max()
        T = float(np.sqrt(max(tmix, floor) * theta))
        per_well = [_l4_surrogate(chain, part, x, T) for x in range(part.kappa)]
        w0 = part.wells[x0]
        avg = float(np.dot(m[w0] / m[w0].sum(), per_well[x0]))
        worst_all = float(max(v.max() for v in per_well))
        rows["l4"].append(avg)
        rows["l4u"].append(worst_all)
        Q = killed_generator(trace, tp.wells[x0])
        rows["l4_exact"].append(float(1.0 - propagate(Q, mE[tp.wells[x0]], T, side="left").sum()))
        mix = 0.0
        for w, g in zip(part.wells, refl):
            if w.size > 1:
                px = chain.pi[w] / chain.pi[w].sum()
                mix = max(mix, float(np.log(1.0 / px.min()) / (T * g)))
        rows["mixing"].append(mix)

        extra["gap_trace"].append(gE)
        extra["reflected_gaps"].append(refl.tolist())
        extra["T"].append(T)
        extra["t_mix"].append(tmix)
        extra["gamma"].append(gamma)

    kinds = {
        "l1_gap": "vanish", "l1_rates": "stabilize", "l2g": "bounded", "l2": "bounded",
        "l3": "vanish", "c43": "bounded", "l4": "vanish", "l4u": "vanish",
        "l4_exact": "vanish", "mixing": "vanish",
    }
    trends = {
        name: Trend(name, kinds[name], vals, _JUDGES[kinds[name]](vals, thresholds))
        for name, vals in rows.items()
    }
    return ConditionReport(list(family.params), thetas, trends, thresholds, extra)
