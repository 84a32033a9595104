"""Command-line entry point: ``kikuchi <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from math import comb

import numpy as np

from . import tensor as tensor_mod
from .errors import ConfigurationError, ConvergenceError, InvalidArgumentError, ResourceLimitError
from .experiments import fit_scaling, load_config, normalized_norm, run_sweep, spectrum_report
from .operator import KikuchiOperator
from .pca import DetectionParams, detect, recover
from .spectral import estimate_norm
from .trace_oracle import (
    expected_trace,
    expected_trace_bruteforce,
    generate_lower_bound_walks,
    lower_bound_family_count,
    monte_carlo_trace,
    walk_value,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_NONCONVERGENCE = 4


class _NonConvergence(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int)
    p.add_argument("--ell", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--dist", choices=["gaussian", "rademacher"], default="gaussian")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--trials", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--strict", action="store_true", help="exit 4 when power iteration does not converge")


def _require(args, *names):
    missing = [f"--{name}" for name in names if getattr(args, name) is None]
    if missing:
        raise ConfigurationError(f"missing required option(s) {' '.join(missing)}")


def _instance(args):
    """Tensor from ``--input`` or a fresh sample; a spike is planted when ``--lambda`` > 0."""
    spike = None
    if getattr(args, "input", None):
        t = tensor_mod.load(args.input)
    else:
        _require(args, "n", "r")
        t = tensor_mod.sample_tensor(args.n, args.r, args.dist, args.seed)
        if args.lam > 0:
            spike = tensor_mod.Spike.random(args.n, args.lam, args.seed + 1)
            t = tensor_mod.add_spike(t, spike)
    return t, spike


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, default=float))


def _check_converged(args, converged: bool) -> None:
    if args.strict and not converged:
        raise _NonConvergence()


def cmd_gen(args) -> None:
    _require(args, "out")
    t, _ = _instance(args)
    tensor_mod.save(t, args.out)
    _emit({"path": args.out, "n": t.n, "r": t.r, "entries": int(t.entries.size), "distribution": t.distribution.value})


def cmd_norm(args) -> None:
    _require(args, "ell")
    t, _ = _instance(args)
    op = KikuchiOperator(t, args.ell)
    est = estimate_norm(op, args.tol, args.max_iter, args.restarts, args.seed)
    _emit({
        "n": t.n, "ell": args.ell, "r": t.r, "dim": op.dim, "norm": est.norm,
        "normalized_norm": normalized_norm(est.norm, t.n, args.ell, t.r),
        "iterations": est.iterations, "residual": est.residual, "converged": est.converged,
    })
    _check_converged(args, est.converged)


def cmd_detect(args) -> None:
    _require(args, "ell")
    t, _ = _instance(args)
    params = DetectionParams(
        lam=args.lam or None, norm_bound=args.norm_bound, calibration_trials=args.trials or 200,
        quantile=args.quantile, distribution=args.dist, tol=args.tol, max_iter=args.max_iter,
        restarts=args.restarts,
    )
    verdict = detect(t, args.ell, args.mode, params, args.seed)
    _emit(vars(verdict))


def cmd_recover(args) -> None:
    _require(args, "ell")
    t, spike = _instance(args)
    truth = spike.v if spike is not None else None
    res = recover(t, args.ell, args.seed, truth, args.tol, args.max_iter, args.restarts)
    _emit({
        "v_hat": res.v_hat.astype(int).tolist(), "correlation": res.correlation,
        "signed_correlation": res.signed_correlation, "eigenvector_residual": res.eigenvector_residual,
        "converged": res.converged, "ties": res.ties,
    })
    _check_converged(args, res.converged)


def cmd_trace(args) -> None:
    _require(args, "n", "ell", "r")
    out = {"n": args.n, "ell": args.ell, "r": args.r, "q": args.q, "distribution": args.dist}
    if args.method == "exact":
        out["expected_trace"] = expected_trace(args.n, args.ell, args.r, args.q, args.dist, workers=args.threads)
    elif args.method == "brute":
        value = expected_trace_bruteforce(args.n, args.ell, args.r, args.q)
        out.update(expected_trace=str(value), distribution="rademacher")
    else:
        mean, se = monte_carlo_trace(args.n, args.ell, args.r, args.q, args.dist, args.trials or 1000, args.seed)
        out.update(mean=mean, standard_error=se)
    _emit(out)


def cmd_lowerbound(args) -> None:
    _require(args, "n", "ell", "r")
    count = lower_bound_family_count(args.n, args.ell, args.r, args.q)
    out = {"n": args.n, "ell": args.ell, "r": args.r, "q": args.q, "family_count": count}
    if args.generate is not None:
        limit = None if args.generate < 0 else args.generate
        walks = list(generate_lower_bound_walks(args.n, args.ell, args.r, args.q, limit))
        for w in walks:
            w.validate(args.r)
        out.update(
            generated=len(walks), distinct=len(set(walks)),
            all_contributing=all(w.contributing for w in walks),
            all_rademacher_value_one=all(walk_value(w, "rademacher") == 1 for w in walks),
        )
    _emit(out)


def cmd_sweep(args) -> None:
    config = load_config(args.config)
    if args.out:
        config.out = args.out
    if args.threads > 1:
        config.workers = args.threads
    new = run_sweep(config)
    out = {"output": config.out, "new_rows": len(new)}
    if args.fit:
        from .experiments import read_records

        slope, intercept, r2 = fit_scaling(read_records(config.out), args.fit)
        out.update(axis=args.fit, slope=slope, intercept=intercept, r_squared=r2)
    _emit(out)
    _check_converged(args, all(rec.converged for rec in new))


def cmd_spectrum(args) -> None:
    _require(args, "n", "ell", "r")
    rep = spectrum_report(args.n, args.ell, args.r, args.trials or 1, args.seed, args.dist, args.out)
    _emit({
        "n": rep.n, "ell": rep.ell, "r": rep.r, "samples": rep.samples, "eigenvalues": int(rep.eigenvalues.size),
        "moments": rep.moments, "semicircle": rep.semicircle, "m4_over_m2sq": rep.kurtosis_ratio,
        "semicircle_m4_over_m2sq": 2.0, "trace_error": rep.trace_error, "frobenius_error": rep.frobenius_error,
    })


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kikuchi", description="Kikuchi-matrix spectral methods for tensor PCA")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample a tensor and save it")
    _common(p)
    p.set_defaults(func=cmd_gen)

    for name, func, helptext in [
        ("norm", cmd_norm, "estimate the Kikuchi spectral norm"),
        ("detect", cmd_detect, "planted-vs-null decision"),
        ("recover", cmd_recover, "recover the planted sign vector"),
    ]:
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--input", help="tensor file written by `gen`")
        if name == "detect":
            p.add_argument("--mode", choices=["empirical", "analytic"], default="empirical")
            p.add_argument("--norm-bound", type=float)
            p.add_argument("--quantile", type=float, default=0.99)
        p.set_defaults(func=func)

    p = sub.add_parser("trace", help="expected trace E[Tr(M^2q)]")
    _common(p)
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--method", choices=["exact", "brute", "mc"], default="exact")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("lowerbound", help="lower-bound walk family")
    _common(p)
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--generate", type=int, help="emit up to this many walks (-1: all)")
    p.set_defaults(func=cmd_lowerbound)

    p = sub.add_parser("sweep", help="run a parameter sweep from a config file")
    _common(p)
    p.add_argument("--config", required=True)
    p.add_argument("--fit", choices=["n", "ell"], help="fit a power law to the finished sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("spectrum", help="pooled spectra and moment table (--trials = samples)")
    _common(p)
    p.set_defaults(func=cmd_spectrum)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigurationError, InvalidArgumentError, tensor_mod.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (_NonConvergence, ConvergenceError) as exc:
        print(f"not converged {exc}".rstrip(), file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
