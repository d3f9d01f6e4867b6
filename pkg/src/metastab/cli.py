"""Command-line front end.

Exit codes: 0 when every requested check passes, 1 when a check fails,
2 for usage and input errors, 3 for numerical failures.
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as mio
from .errors import MetastabError, NumericalError, ParseError, UnknownSuite
from .metastability import (
    ChainFamily,
    auto_gamma,
    check_conditions,
    original_reflected_gaps,
    predict_limit_chain,
)
from .models import DogGraphSpec, PolymerSpec, dog_graph, polymer
from .potential import capacity, mean_jump_rates
from .simulate import sample_path
from .spectral import mixing_profile, spectral_gap
from .transforms import trace_chain
from .verify import SUITES, run_suite

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _build_model(args):
    if args.model == "dog":
        return dog_graph(DogGraphSpec(args.N, args.d, args.alpha))
    if args.model == "polymer":
        alpha = 0.3 if args.alpha is None else args.alpha
        return polymer(PolymerSpec(args.N, alpha, args.ell))
    raise UsageError(f"unknown model {args.model!r}")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj, args):
    mio.atomic_write(path, json.dumps(mio.to_jsonable(obj), indent=1, sort_keys=True) + "\n",
                     overwrite=args.overwrite)


def cmd_model(args):
    chain, part = _build_model(args)
    out = _out_dir(args)
    mio.save_chain(chain, out / "chain.json", overwrite=args.overwrite)
    mio.save_partition(part, chain.labels, out / "partition.json", overwrite=args.overwrite)
    print(f"{args.model}: {chain.n} states, well sizes "
          f"{[int(w.size) for w in part.wells]}, separating set {part.delta.size}")
    return EXIT_OK


def _analyze(chain, part, gamma, theta, tol):
    report = {"states": chain.n, "tol": tol}
    report["gap"] = spectral_gap(chain).gap
    trace = trace_chain(chain, part.union)
    tp = part.on_union()
    gE = spectral_gap(trace).gap
    refl = original_reflected_gaps(chain, part)
    report["gap_trace"] = gE
    report["reflected_gaps"] = refl.tolist()
    k = part.kappa
    caps = np.zeros((k, k))
    for x in range(k):
        for y in range(x + 1, k):
            caps[x, y] = caps[y, x] = capacity(chain, part.wells[x], part.wells[y]).value
    report["capacities"] = caps.tolist()
    report["well_masses"] = [float(chain.pi[w].sum()) for w in part.wells]
    report["delta_mass"] = float(chain.pi[part.delta].sum())
    g = auto_gamma(gE, refl, trace) if gamma is None else gamma
    report["gamma"] = g
    report["mean_jump_rates"] = mean_jump_rates(trace, tp, g).rates.tolist()
    th = 1.0 / gE if theta is None else theta
    report["theta"] = th
    prof = mixing_profile(chain)
    report["t_mix"] = prof.t_mix[0.25]
    report["t_mix_bound"] = prof.bound
    report["surrogates"] = {
        "inverse_theta_over_min_reflected_gap": float(1.0 / (th * refl.min())),
        "delta_over_min_well_mass": report["delta_mass"] / min(report["well_masses"]),
        "t_mix_over_theta": prof.t_mix[0.25] / th,
    }
    return report, prof


def cmd_analyze(args):
    chain = mio.load_chain(args.chain)
    part = mio.load_partition(args.partition, chain)
    report, prof = _analyze(chain, part, args.gamma, args.theta, args.tol)
    out = _out_dir(args)
    if args.format == "json":
        report["pi"] = chain.pi.tolist()
        _write_json(out / "report.json", report, args)
    else:
        _write_json(out / "report.json", report, args)
        mio.write_csv(out / "pi.csv", ("state", "weight"),
                      zip(chain.labels, chain.pi), overwrite=args.overwrite)
        mio.write_csv(out / "mixing.csv", ("t", "d"), zip(prof.times, prof.d),
                      overwrite=args.overwrite)
    print(f"gap {report['gap']:.6g}  trace gap {report['gap_trace']:.6g}  "
          f"t_mix {report['t_mix']:.6g}  gamma {report['gamma']:.6g}")
    return EXIT_OK


_VERIFY_KEYS = {
    "identities": ("seed", "count"),
    "sandwich": ("seed", "count"),
    "two-valley": ("Ns",),
    "fdd": ("N", "n", "seed"),
    "polymer": ("Ns", "alpha"),
    "dog": ("Ns",),
    "exit-law": ("N", "n", "seed"),
    "occupation": ("Ns",),
    "bounds": ("seed", "count"),
}


def cmd_verify(args):
    if args.suite not in SUITES:
        raise UnknownSuite(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}")
    if args.suite in ("fdd", "exit-law") and args.seed is None:
        raise UsageError(f"suite {args.suite} samples trajectories and needs --seed")
    if args.model is not None and args.model != ("polymer" if args.suite == "polymer" else "dog"):
        raise UsageError(f"suite {args.suite} does not run on model {args.model}")
    values = {"seed": args.seed, "count": args.count, "N": args.N, "n": args.n,
              "Ns": args.params, "alpha": args.alpha}
    if args.suite == "two-valley" and args.N is not None and args.params is None:
        values["Ns"] = [args.N]
    kwargs = {k: values[k] for k in _VERIFY_KEYS[args.suite] if values[k] is not None}
    if args.suite == "two-valley" and len(kwargs.get("Ns", (4, 8, 16))) < 2:
        kwargs["Ns"] = sorted({4, 8, *kwargs["Ns"]})
    res = run_suite(args.suite, **kwargs)
    print(res.table())
    print(f"{args.suite}: {'PASS' if res.passed else 'FAIL'} ({res.runtime:.1f} s)")
    if args.out:
        out = _out_dir(args)
        data = res.as_dict()
        data["config"] = {"tol": args.tol}
        _write_json(out / f"verify-{args.suite}.json", data, args)
    return EXIT_OK if res.passed else EXIT_CHECK


def cmd_family(args):
    params = args.params
    members = []
    for N in params:
        ns = argparse.Namespace(**{**vars(args), "N": N})
        chain, part = _build_model(ns)
        members.append((N, chain, part))
    family = ChainFamily(members)
    report = check_conditions(family)
    data = report.as_dict()
    try:
        limit = predict_limit_chain(family)
        data["limit_rates"] = limit.rates.tolist()
        data["raw_rates"] = limit.raw.tolist()
    except MetastabError as exc:
        data["limit_rates"] = None
        data["limit_error"] = str(exc)
    data["model"] = args.model
    out = _out_dir(args)
    _write_json(out / "conditions.json", data, args)
    rows = []
    for name, trend in report.trends.items():
        for N, v in zip(params, trend.values):
            rows.append((name, N, json.dumps(mio.to_jsonable(v)), trend.verdict))
    mio.write_csv(out / "trends.csv", ("condition", "N", "value", "verdict"), rows,
                  overwrite=args.overwrite)
    print(f"{'condition':<10} " + " ".join(f"{N:>10}" for N in params) + "  verdict")
    for name, trend in report.trends.items():
        vals = [v if np.ndim(v) == 0 else float(np.max(v)) for v in trend.values]
        print(f"{name:<10} " + " ".join(f"{v:>10.4g}" for v in vals) + f"  {trend.verdict}")
    return EXIT_OK


def cmd_sample(args):
    if args.seed is None:
        raise UsageError("sampling needs an explicit --seed")
    chain = mio.load_chain(args.chain)
    try:
        init = chain.index[mio._label(json.loads(args.init))]
    except (json.JSONDecodeError, KeyError, TypeError):
        try:
            init = chain.index[args.init]
        except KeyError:
            raise UsageError(f"unknown initial state {args.init!r}") from None
    traj = sample_path(chain, init, args.horizon, args.seed)
    out = _out_dir(args)
    rows = [(t, chain.labels[s]) for t, s in zip(traj.times, traj.states)]
    mio.write_csv(out / "trajectory.csv", ("t", "state"), rows, overwrite=args.overwrite)
    print(f"{len(rows)} breakpoints up to t = {args.horizon}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--tol", type=float, default=1e-10)
    common.add_argument("--overwrite", action="store_true",
                        help="replace existing output files")

    p = argparse.ArgumentParser(prog="metastab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("model", parents=[common], help="write a model chain and partition")
    m.add_argument("model", choices=("dog", "polymer"))
    m.add_argument("--N", type=int, required=True)
    m.add_argument("--d", type=int, default=2)
    m.add_argument("--alpha", type=float, default=None)
    m.add_argument("--ell", type=int, default=None)
    m.set_defaults(func=cmd_model)

    a = sub.add_parser("analyze", parents=[common], help="one-shot report on a chain")
    a.add_argument("--chain", required=True)
    a.add_argument("--partition", required=True)
    a.add_argument("--gamma", type=float, default=None)
    a.add_argument("--theta", type=float, default=None)
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("suite")
    v.add_argument("--model", choices=("dog", "polymer"), default=None)
    v.add_argument("--N", type=int, default=None)
    v.add_argument("--n", type=int, default=None)
    v.add_argument("--count", type=int, default=None)
    v.add_argument("--params", type=int, nargs="+", default=None)
    v.add_argument("--alpha", type=float, default=None)
    v.set_defaults(func=cmd_verify, out=None)

    f = sub.add_parser("family", parents=[common], help="condition trends over a family")
    f.add_argument("model", choices=("dog", "polymer"))
    f.add_argument("--params", type=int, nargs="+", required=True)
    f.add_argument("--d", type=int, default=2)
    f.add_argument("--alpha", type=float, default=None)
    f.add_argument("--ell", type=int, default=None)
    f.set_defaults(func=cmd_family)

    s = sub.add_parser("sample", parents=[common], help="sample one trajectory")
    s.add_argument("--chain", required=True)
    s.add_argument("--init", required=True, help="initial state label (JSON or plain)")
    s.add_argument("--horizon", type=float, required=True)
    s.set_defaults(func=cmd_sample)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ParseError, UnknownSuite, FileExistsError, FileNotFoundError) as exc:
        print(f"metastab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"metastab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MetastabError as exc:
        print(f"metastab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
