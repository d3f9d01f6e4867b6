"""Verification suites: identities, inequalities and finite-size trends.

Each suite returns a :class:`SuiteResult` whose rows carry the measured
value, the tolerance it is judged against and the verdict.  Suites are
deterministic given their seed.
"""
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .chain import dirichlet_form
from .errors import UnknownSuite
from .metastability import (
    LimitChain,
    cesaro_occupation,
    limit_semigroup,
    original_reflected_gaps,
    two_valley_ratio,
)
from .models import (
    DogGraphSpec,
    PolymerSpec,
    dog_graph,
    polymer,
    random_reversible,
    random_wells,
)
from .potential import (
    capacity,
    hitting_prob_capacity_formula,
    l4_bounds,
    mean_jump_rates,
    quasi_stationary,
    well_exit_rate,
)
from .semigroup import killed_generator, propagate
from .simulate import delta_occupation, hitting_time_samples, order_fdd_estimate
from .spectral import (
    gap_sandwich,
    gap_upper_bound_capacity,
    harmonic_extension,
    spectral_gap,
)
from .transforms import Partition, reflect_chain, trace_chain

__all__ = ["Verdict", "SuiteResult", "SUITES", "run_suite", "random_instances",
           "dog_limit"]

IDENTITY_TOL = 1e-10
SLACK_TOL = -1e-10
GAMMA_FACTORS = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class Verdict:
    check: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class SuiteResult:
    suite: str
    rows: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    runtime: float = 0.0

    @property
    def passed(self):
        return bool(self.rows) and all(r.passed for r in self.rows)

    def add(self, check, value, tolerance, passed, detail=""):
        self.rows.append(Verdict(check, float(value), float(tolerance), bool(passed), detail))

    def as_dict(self):
        return {"suite": self.suite, "params": self.params, "passed": self.passed,
                "rows": [asdict(r) for r in self.rows]}

    def table(self):
        lines = [f"{'check':<44} {'value':>12} {'tol':>10}  verdict"]
        for r in self.rows:
            lines.append(f"{r.check:<44} {r.value:>12.4g} {r.tolerance:>10.3g}  "
                         f"{'PASS' if r.passed else 'FAIL'}")
        return "\n".join(lines)


def random_instances(seed, count, n_max=60, *, kappa=(2, 3), n_min=5):
    """Yield ``(chain, partition)`` pairs of random reversible chains with
    random connected wells."""
    rng = np.random.default_rng(seed)
    for k in range(count):
        n = int(rng.integers(n_min, n_max + 1))
        lo = min(0.5, 3.0 / n)
        sparsity = float(rng.uniform(lo, max(lo, 0.5)))
        chain = random_reversible(n, int(rng.integers(2**31)), sparsity)
        kap = int(rng.choice(kappa))
        part = random_wells(chain, kap, int(rng.integers(2**31)),
                            delta_prob=float(rng.uniform(0.0, 0.5)))
        yield chain, part


def _well_measure(chain, well):
    nu = np.zeros(chain.n)
    nu[well] = chain.pi[well] / chain.pi[well].sum()
    return nu


# -- suites -----------------------------------------------------------------

def identities(seed=7, count=200, n_max=60):
    """Exact identities between capacities, rates and Dirichlet forms."""
    res = SuiteResult("identities", params={"seed": seed, "count": count, "n_max": n_max})
    rng = np.random.default_rng(seed + 1)
    worst = {"row": 0.0, "pair": 0.0, "three": 0.0, "exit": 0.0, "ext": 0.0}
    slack = np.inf
    ill = 0
    for chain, part in random_instances(seed, count, n_max):
        trace = trace_chain(chain, part.union)
        tp = part.on_union()
        mjr = mean_jump_rates(trace, tp)
        scale = max(float(mjr.star_capacities.max()), 1e-300)
        worst["row"] = max(worst["row"], mjr.row_identity_error / scale)
        worst["pair"] = max(worst["pair"], mjr.pair_identity_error / scale)

        for x, w in enumerate(part.wells):
            lhs = well_exit_rate(trace, tp, x)
            rhs = capacity(chain, w, part.others(x)).value / chain.pi[w].sum()
            worst["exit"] = max(worst["exit"], abs(lhs - rhs) / max(abs(rhs), 1e-300))
            slack = min(slack, (lhs - mjr.rates[x].sum()) / max(lhs, 1e-300))

        # three-capacity identity at a state outside two disjoint sets
        perm = rng.permutation(chain.n)
        a = int(rng.integers(1, chain.n - 1))
        b = int(rng.integers(a + 1, chain.n))
        hp = hitting_prob_capacity_formula(chain, perm[0], perm[1:a + 1], perm[a + 1:b + 1])
        if hp.ill_conditioned:
            ill += 1
        else:
            worst["three"] = max(worst["three"], abs(hp.identity_value - hp.potential_value))

        F = rng.normal(size=part.union.size)
        ext = harmonic_extension(chain, part.union, F, check=False)
        lhs = dirichlet_form(chain, ext)
        rhs = chain.pi[part.union].sum() * dirichlet_form(trace, F)
        worst["ext"] = max(worst["ext"], abs(lhs - rhs) / max(abs(lhs), 1e-300))

    res.add("star-capacity row identity (rel)", worst["row"], IDENTITY_TOL,
            worst["row"] <= IDENTITY_TOL)
    res.add("star-capacity pair identity (rel)", worst["pair"], IDENTITY_TOL,
            worst["pair"] <= IDENTITY_TOL)
    res.add("three-capacity hitting identity (abs)", worst["three"], IDENTITY_TOL,
            worst["three"] <= IDENTITY_TOL, f"{ill} ill-conditioned cases used the potential")
    res.add("trace exit rate = capacity / mass (rel)", worst["exit"], IDENTITY_TOL,
            worst["exit"] <= IDENTITY_TOL)
    res.add("harmonic extension energy (rel)", worst["ext"], IDENTITY_TOL,
            worst["ext"] <= IDENTITY_TOL)
    res.add("row sum of mean rates <= exit rate (min rel slack)", slack, 0.0, slack >= 0.0)
    return res


def sandwich(seed=11, count=100, n_max=40):
    """Gap sandwiches for trace chains and the two-valley capacity sandwich."""
    res = SuiteResult("sandwich", params={"seed": seed, "count": count, "n_max": n_max,
                                          "gamma_factors": list(GAMMA_FACTORS)})
    up = low = cap_slack = tv_slack = np.inf
    tv_checked = 0
    for chain, part in random_instances(seed, count, n_max, kappa=(2,)):
        E = part.union
        gs = gap_sandwich(chain, E)
        scale = max(1.0, gs.gap_trace)
        up = min(up, gs.upper_slack / scale)
        low = min(low, gs.lower_slack / scale)
        A = part.wells[0]
        bound = gap_upper_bound_capacity(chain, A, E)
        cap_slack = min(cap_slack, (bound - gs.gap_trace) / max(bound, 1e-300))
        A, B = part.wells
        base = two_valley_ratio(chain, A, B)
        for f in GAMMA_FACTORS:
            r = base if f == 1.0 else two_valley_ratio(chain, A, B, base.gamma * f,
                                                        reflected=base.reflected)
            s = min(r.middle - r.lower, r.upper - r.middle) / max(1.0, r.middle)
            tv_slack = min(tv_slack, s)
            tv_checked += 1
    res.add("gap <= trace gap (min rel slack)", up, SLACK_TOL, up >= SLACK_TOL)
    res.add("trace gap lower estimate <= gap (min rel slack)", low, SLACK_TOL, low >= SLACK_TOL)
    res.add("trace gap <= capacity bound (min rel slack)", cap_slack, SLACK_TOL,
            cap_slack >= SLACK_TOL)
    res.add("two-valley sandwich (min rel slack)", tv_slack, SLACK_TOL, tv_slack >= SLACK_TOL,
            f"{tv_checked} (chain, gamma) pairs")
    return res


def _dog_ratios(Ns, d=2):
    out = []
    for N in Ns:
        chain, part = dog_graph(DogGraphSpec(N, d))
        out.append(two_valley_ratio(chain, *part.wells))
    return out


def two_valley(Ns=(4, 8, 16), d=2, target=0.5, tol=0.15):
    """Normalised star capacity over the trace gap along the dog-graph family."""
    res = SuiteResult("two-valley", params={"Ns": list(Ns), "d": d})
    reps = _dog_ratios(Ns, d)
    errs = [abs(r.ratio - target) for r in reps]
    for N, r in zip(Ns, reps):
        res.add(f"ratio N={N}", r.ratio, target, True, f"gamma={r.gamma:.4g}")
        res.add(f"two-valley sandwich N={N}", r.middle, r.upper, r.ok)
    res.add(f"|ratio - {target}| at N={Ns[-1]}", errs[-1], tol, errs[-1] <= tol)
    mono = all(b < a for a, b in zip(errs, errs[1:]))
    res.add("distance to target decreasing in N", float(mono), 1.0, mono)
    return res


def dog_limit(N, d=2):
    """Dog graph, its wells, the time scale ``1/trace gap`` and the start measure."""
    chain, part = dog_graph(DogGraphSpec(N, d))
    gE = spectral_gap(trace_chain(chain, part.union)).gap
    return chain, part, 1.0 / gE, _well_measure(chain, part.wells[0])


SYMMETRIC_LIMIT = LimitChain.from_rates([[0.0, 0.5], [0.5, 0.0]])


def fdd(N=8, n=5000, seed=1, times=(0.5, 1.0, 2.0), tol=0.05, method="direct"):
    """One-time marginals of the rescaled order process against the limit chain."""
    res = SuiteResult("fdd", params={"N": N, "n": n, "seed": seed, "times": list(times),
                                     "method": method})
    chain, part, theta, nu = dog_limit(N)
    est = order_fdd_estimate(chain, part, nu, theta, times, n, seed, method=method)
    for j, t in enumerate(times):
        ref = limit_semigroup(SYMMETRIC_LIMIT, t)[0]
        err = float(np.max(np.abs(est.marginals[j] - ref)))
        allowed = tol + float(est.halfwidth[j].max())
        res.add(f"marginal t={t} (P[B]={est.marginals[j][1]:.4f} vs {ref[1]:.4f})",
                err, allowed, err <= allowed)
    return res


def exit_law(N=8, n=10_000, seed=3, level=0.01, tol=1e-8, grid_points=10):
    """Exponential exit from each dog-graph well started quasi-stationary."""
    res = SuiteResult("exit-law", params={"N": N, "n": n, "seed": seed})
    chain, part = dog_graph(DogGraphSpec(N))
    for x, w in enumerate(part.wells):
        qs = quasi_stationary(chain, w)
        nu = np.zeros(chain.n)
        nu[w] = qs.measure
        out = np.setdiff1d(np.arange(chain.n), w)
        h = hitting_time_samples(chain, nu, out, n, seed + x)
        res.add(f"well {x}: Lilliefors p-value", h.ks_pvalue, level, h.ks_pvalue > level,
                f"rate {qs.rate:.5g}, sample rate {1 / h.mean:.5g}")
        Q = killed_generator(chain, w)
        ts = np.linspace(0.0, 3.0 / qs.rate, grid_points + 1)[1:]
        err = max(abs(propagate(Q, qs.measure, t, side="left").sum() - np.exp(-qs.rate * t))
                  for t in ts)
        res.add(f"well {x}: survival vs exponential", err, tol, err <= tol)
    return res


def _reflection_perm(labels):
    flip = {lab: "".join("1" if c == "0" else "0" for c in lab) for lab in labels}
    pos = {lab: i for i, lab in enumerate(labels)}
    return np.array([pos[flip[lab]] for lab in labels])


def polymer_suite(Ns=(3, 4, 5), alpha=0.3, tol=1e-12):
    """Detailed balance, gap ratios and reflection symmetry of the polymer."""
    res = SuiteResult("polymer", params={"Ns": list(Ns), "alpha": alpha})
    ratios = []
    for N in Ns:
        chain, part = polymer(PolymerSpec(N, alpha))
        res.add(f"2N={2 * N}: detailed balance", chain.balance_error, tol,
                chain.balance_error <= tol)
        g = spectral_gap(chain).gap
        refl = original_reflected_gaps(chain, part)
        ratios.append(g / refl.min())
        res.add(f"2N={2 * N}: gap / min reflected gap", ratios[-1], 1.0, True)

        p = _reflection_perm(chain.labels)
        R = chain.rates.toarray()
        sym = [
            np.max(np.abs(chain.pi[p] - chain.pi)),
            np.max(np.abs(R[np.ix_(p, p)] - R)),
            abs(refl[0] - refl[1]),
            abs(chain.pi[part.wells[0]].sum() - chain.pi[part.wells[1]].sum()),
            np.max(np.abs(np.sort(p[part.wells[0]]) - part.wells[1])),
        ]
        mjr = mean_jump_rates(trace_chain(chain, part.union), part.on_union())
        sym.append(abs(mjr.rates[0, 1] - mjr.rates[1, 0]) / mjr.rates.max())
        err = float(max(sym))
        res.add(f"2N={2 * N}: reflection symmetry", err, tol, err <= tol)
    dec = all(b < a for a, b in zip(ratios, ratios[1:]))
    res.add("gap ratio decreasing", float(dec), 1.0, dec)
    return res


def _slope(Ns, values):
    return float(np.polyfit(np.log(Ns), np.log(values), 1)[0])


def dog_suite(Ns=(4, 8, 16, 32), d=2):
    """Scaling of gaps and capacities along the planar dog graph."""
    res = SuiteResult("dog", params={"Ns": list(Ns), "d": d})
    Ns = np.asarray(Ns, dtype=float)
    gaps, quad, caps = [], [], []
    for N in Ns.astype(int):
        chain, part = dog_graph(DogGraphSpec(int(N), d))
        gaps.append(spectral_gap(chain).gap)
        Q = [i for i, v in enumerate(chain.labels) if min(v) >= 0]
        quad.append(spectral_gap(reflect_chain(chain, Q)).gap)
        caps.append(capacity(chain, *part.wells).value)
    gaps, quad, caps = map(np.array, (gaps, quad, caps))
    s = _slope(Ns, gaps * np.log(Ns))
    res.add("slope of log(gap * log N)", s, -1.8, -2.4 <= s <= -1.8, "window [-2.4, -1.8]")
    s = _slope(Ns, quad)
    res.add("slope of log(reflected quadrant gap)", s, -1.8, -2.2 <= s <= -1.8,
            "window [-2.2, -1.8]")
    band = caps * Ns ** 2 * np.log(Ns)
    spread = float(band.max() / band.min())
    res.add("capacity * N^2 log N band (max/min)", spread, 4.0, spread <= 4.0)
    return res


def occupation(Ns=(8, 16), t=2.0, delta_tol=0.05, cesaro_tol=0.1):
    """Time in the separating set and time-averaged well occupations."""
    res = SuiteResult("occupation", params={"Ns": list(Ns), "t": t})
    disc = []
    for N in Ns:
        chain, part, theta, nu = dog_limit(N)
        occ = delta_occupation(chain, part, nu, theta, t, method="exact").value
        ces = cesaro_occupation(chain, part, nu, theta, t, SYMMETRIC_LIMIT)
        disc.append(float(ces.discrepancy.max()))
        if N == Ns[-1]:
            res.add(f"N={N}: separating-set occupation", occ, delta_tol, occ <= delta_tol)
            res.add(f"N={N}: Cesaro discrepancy", disc[-1], cesaro_tol,
                    disc[-1] <= cesaro_tol)
        else:
            res.add(f"N={N}: separating-set occupation", occ, delta_tol, True, "reported")
            res.add(f"N={N}: Cesaro discrepancy", disc[-1], cesaro_tol, True, "reported")
    dec = all(b < a for a, b in zip(disc, disc[1:]))
    res.add("Cesaro discrepancy decreasing", float(dec), 1.0, dec)
    return res


def bounds(seed=13, count=50, n_max=40, gamma_factors=(0.1, 1.0, 10.0)):
    """Early-exit bounds against exact killed-semigroup probabilities."""
    res = SuiteResult("bounds", params={"seed": seed, "count": count,
                                        "gamma_factors": list(gamma_factors)})
    worst = {"potential": np.inf, "lower": np.inf, "l2": np.inf, "capacity_ratio": np.inf}
    checked = 0
    rng = np.random.default_rng(seed + 1)
    for chain, part in random_instances(seed, count, n_max, kappa=(2,)):
        trace = trace_chain(chain, part.union)
        gE = spectral_gap(trace).gap
        for x, w in enumerate(part.wells):
            dens = rng.exponential(size=w.size)
            for nu_w in (chain.pi[w], chain.pi[w] * dens):
                nu = np.zeros(chain.n)
                nu[w] = nu_w / nu_w.sum()
                for f in gamma_factors:
                    rep = l4_bounds(chain, part, x, gE * f, nu)
                    for k, m in rep.margins.items():
                        worst[k] = min(worst[k], m)
                    checked += 1
    labels = {
        "potential": "potential upper bracket",
        "lower": "potential lower bracket",
        "l2": "density-capacity bound",
        "capacity_ratio": "capacity-ratio bound",
    }
    for k, name in labels.items():
        res.add(f"{name} (min margin)", worst[k], SLACK_TOL, worst[k] >= SLACK_TOL,
                f"{checked} cases")
    return res


SUITES = {
    "identities": identities,
    "sandwich": sandwich,
    "two-valley": two_valley,
    "fdd": fdd,
    "polymer": polymer_suite,
    "dog": dog_suite,
    "exit-law": exit_law,
    "occupation": occupation,
    "bounds": bounds,
}


def run_suite(name, **kwargs):
    """Run a named suite and record its wall time."""
    try:
        fn = SUITES[name]
    except KeyError:
        raise UnknownSuite(f"unknown suite {name!r}; choose from {', '.join(SUITES)}") from None
    t0 = time.perf_counter()
    res = fn(**kwargs)
    res.runtime = time.perf_counter() - t0
    return res
