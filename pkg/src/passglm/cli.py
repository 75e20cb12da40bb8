"""Command-line interface.

Subcommands chain the library end to end::

    passglm synth --model logit --dim 10 --n 100000 --theta 0.5 --out data.svm
    passglm stats build --input data.svm --model logit --degree 2 --radius 4 \
        --out stats.pglm
    passglm fit --stats stats.pglm --model logit --degree 2 --radius 4 \
        --prior gaussian:4 --out posterior.json
    passglm baseline --method laplace --input data.svm --model logit \
        --prior gaussian:4 --out laplace.json
    passglm eval --posterior posterior.json --reference laplace.json \
        --test data.svm --model logit --out report.json

Every JSON document carries a ``schema_version`` field.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import chebyshev
from .baselines import MalaConfig, laplace, mala, sgd
from .data import (
    ArrayStream,
    ProjectionSpec,
    SyntheticStream,
    build_stats,
    parse_libsvm,
    project,
    run_sharded,
    synthesize,
    write_libsvm,
)
from .errors import PassGlmError
from .mappings import fit_terms, get_mapping
from .metrics import compare_posteriors, inner_product_histogram, roc_auc, test_nll
from .posterior import GaussianPosterior, PriorSpec, posterior_general, posterior_lr2
from .suffstats import load_stats, merge, save_stats

SCHEMA_VERSION = 1

log = logging.getLogger("passglm")

_APPROX_MODELS = ("logit", "poisson-exp", "shuber", "probit", "gamma")
_STATS_MODELS = ("logit", "poisson", "shuber", "cauchy", "gamma", "probit")


def _approx_phi(model: str, scale: float):
    from scipy.special import log_ndtr

    if model == "logit":
        return lambda s: -np.logaddexp(0.0, -s)
    if model == "poisson-exp":
        return lambda s: -np.exp(s)
    if model == "shuber":
        return lambda s: -(scale**2) * (np.sqrt(1.0 + (s / scale) ** 2) - 1.0)
    if model == "probit":
        return lambda s: log_ndtr(-np.asarray(s, dtype=float))
    if model == "gamma":
        return lambda s: -scale * np.exp(-np.asarray(s, dtype=float))
    raise PassGlmError(f"unknown approximation model {model!r}")


def _approx_bound(model: str, R: float, M: int, scale: float):
    if model == "logit":
        return chebyshev.sup_bound_logit(R, M)
    if model == "poisson-exp":
        return chebyshev.sup_bound_exp(R, M)
    if model == "gamma":
        rep = chebyshev.sup_bound_exp(R, M)
        return chebyshev.BoundReport(
            r=rep.r,
            C=scale * rep.C,
            sup_bound=scale * rep.sup_bound,
            deriv_bound=scale * rep.deriv_bound,
        )
    if model == "shuber":
        return chebyshev.sup_bound_shuber(R, M, scale)
    return None  # no analytic ellipse bound for probit


def _write_json(payload: dict, out: str | None):
    text = json.dumps(payload, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _posterior_to_json(post) -> dict:
    if isinstance(post, GaussianPosterior):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "gaussian",
            "d": post.d,
            "mean": post.mean.tolist(),
            "chol_lower": post.chol.ravel().tolist(),
            "logdet": post.logdet,
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "surrogate",
        "d": post.laplace.d,
        "degree": post.surface.index_set.M,
        "coefficients": post.coefficients.tolist(),
        "map": post.map_estimate.tolist(),
        "domain_radius": post.domain_radius,
        "laplace": {
            "mean": post.laplace.mean.tolist(),
            "chol_lower": post.laplace.chol.ravel().tolist(),
            "logdet": post.laplace.logdet,
        },
    }


def _gaussian_from_json(doc: dict) -> GaussianPosterior:
    if doc.get("kind") == "surrogate":
        doc = doc["laplace"]
        d = int(np.sqrt(len(doc["chol_lower"])))
    else:
        d = doc["d"]
    chol = np.asarray(doc["chol_lower"], dtype=float).reshape(d, d)
    return GaussianPosterior(
        mean=np.asarray(doc["mean"], dtype=float), chol=chol, logdet=doc["logdet"]
    )


def _open_input(args, mapping) -> "ArrayStream":
    labels = mapping.label_mode or "raw"
    return parse_libsvm(args.input, d=args.dim, labels=labels)


def cmd_approx(args) -> int:
    phi = _approx_phi(args.model, args.bscale)
    approx = chebyshev.fit_chebyshev(phi, args.degree, args.radius)
    bound = _approx_bound(args.model, args.radius, args.degree, args.bscale)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "model": args.model,
        "M": approx.M,
        "R": approx.R,
        "b": approx.b.tolist(),
        "c": approx.c.tolist(),
        "sup_err_est": approx.sup_err_est,
        "bound": None
        if bound is None
        else {
            "r": bound.r,
            "C": bound.C,
            "sup_bound": bound.sup_bound,
            "deriv_bound": bound.deriv_bound,
        },
    }
    _write_json(payload, args.out)
    return 0


def cmd_stats_build(args) -> int:
    mapping = get_mapping(args.model, args.bscale)
    stream = _open_input(args, mapping)
    stats = build_stats(stream, mapping, args.degree, args.radius)
    save_stats(stats, args.out)
    log.info("accumulated %d records into %s", stats.n, args.out)
    return 0


def cmd_stats_merge(args) -> int:
    merged = load_stats(args.inputs[0])
    for path in args.inputs[1:]:
        merged = merge(merged, load_stats(path))
    save_stats(merged, args.out)
    log.info("merged %d files (%d records) into %s", len(args.inputs), merged.n, args.out)
    return 0


def cmd_fit(args) -> int:
    stats = load_stats(args.stats[0])
    for path in args.stats[1:]:
        stats = merge(stats, load_stats(path))
    prior = PriorSpec.parse(args.prior)
    mapping = stats.mapping
    if mapping.raw_monomial:
        (approx,) = fit_terms(mapping, stats.index_set.M, stats.radius)
        if stats.index_set.M == 2 and prior.kind == "gaussian" and args.domain_radius is None:
            post = posterior_lr2(stats, approx, prior)
        else:
            post = posterior_general(stats, approx, prior, domain_radius=args.domain_radius)
    else:
        post = posterior_general(stats, None, prior, domain_radius=args.domain_radius)
    _write_json(_posterior_to_json(post), args.out)
    return 0


def cmd_baseline(args) -> int:
    mapping = get_mapping(args.model, args.bscale)
    prior = PriorSpec.parse(args.prior)
    stream = _open_input(args, mapping)
    if args.method == "laplace":
        post = laplace(mapping, prior, stream)
        _write_json(_posterior_to_json(post), args.out)
        return 0
    if args.method == "sgd":
        theta = sgd(mapping, stream, epochs=args.epochs, eta0=args.eta0, prior=prior, seed=args.seed)
        _write_json(
            {"schema_version": SCHEMA_VERSION, "kind": "point", "theta": theta.tolist()},
            args.out,
        )
        return 0
    config = MalaConfig(iterations=args.iters, chains=args.chains, seed=args.seed)
    out = mala(mapping, prior, stream, config)
    draws_path = args.draws_out or (args.out or "mala") + ".draws.npz"
    np.savez_compressed(draws_path, draws=out.draws)
    _write_json(
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "mala",
            "rhat": None if out.rhat is None else out.rhat.tolist(),
            "accept_rates": out.accept_rates.tolist(),
            "step_sizes": out.step_sizes.tolist(),
            "draws_file": str(draws_path),
            "posterior_mean": out.pooled().mean(axis=0).tolist(),
        },
        args.out,
    )
    return 0


def cmd_eval(args) -> int:
    with open(args.posterior) as fh:
        post_doc = json.load(fh)
    with open(args.reference) as fh:
        ref_doc = json.load(fh)
    post = _gaussian_from_json(post_doc)
    ref = _gaussian_from_json(ref_doc)
    report = compare_posteriors(post, ref)
    payload = report.as_dict()
    payload["schema_version"] = SCHEMA_VERSION
    if args.test:
        mapping = get_mapping(args.model, args.bscale)
        stream = parse_libsvm(args.test, d=post.d, labels=mapping.label_mode or "raw")
        y, X = stream.materialize()
        payload["test_nll"] = test_nll(mapping, post, (y, X))
        if mapping.label_mode is not None:
            payload["auc"] = roc_auc(np.asarray(X @ post.mean), mapping.canonicalize_y(y))
        hist = inner_product_histogram((y, X), post.mean, radius=args.radius)
        payload["histogram"] = {
            "counts": hist.counts.tolist(),
            "edges": hist.edges.tolist(),
            "in_range_fraction": hist.in_range_fraction,
            "radius": hist.radius,
        }
    _write_json(payload, args.out)
    return 0


def cmd_project(args) -> int:
    base = parse_libsvm(args.input, d=args.input_dim)
    spec = ProjectionSpec(seed=args.seed, input_dim=base.d, output_dim=args.dim)
    projected = project(base, spec)
    y, X = projected.materialize()
    write_libsvm(args.output, y, X)
    log.info("projected %d records from d=%d to d=%d", len(y), base.d, args.dim)
    return 0


def cmd_synth(args) -> int:
    theta = [float(v) for v in args.theta.split(",")] if "," in args.theta else float(args.theta)
    synthesize(
        args.model, args.dim, args.n, seed=args.seed, theta_true=theta, path=args.out,
        scale=args.bscale,
    )
    return 0


def cmd_bench(args) -> int:
    mapping = get_mapping(args.model, args.bscale)
    theta = np.full(args.dim, 0.5)
    y, X = SyntheticStream(args.model, args.dim, args.n, args.seed, theta).materialize()

    t0 = time.perf_counter()
    sequential = build_stats(ArrayStream(y, X), mapping, args.degree, args.radius)
    t_seq = time.perf_counter() - t0

    t0 = time.perf_counter()
    sharded = run_sharded(ArrayStream(y, X), args.shards, mapping, args.degree, args.radius)
    t_shard = time.perf_counter() - t0

    vals, svals = sequential.values(), sharded.values()
    max_rel = float(np.max(np.abs(vals - svals) / np.maximum(1e-30, np.abs(vals))))
    payload = {
        "schema_version": SCHEMA_VERSION,
        "n": args.n,
        "d": args.dim,
        "M": args.degree,
        "shards": args.shards,
        "seconds_sequential": t_seq,
        "seconds_sharded": t_shard,
        "records_per_second_sequential": args.n / t_seq,
        "speedup": t_seq / t_shard,
        "max_relative_entry_difference": max_rel,
        "cpu_count": os.cpu_count(),
    }
    _write_json(payload, args.out)
    return 0


def _add_common_model_flags(p, models=_STATS_MODELS):
    p.add_argument("--model", required=True, choices=models)
    p.add_argument("--bscale", type=float, default=1.0,
                   help="scale parameter for shuber/cauchy/gamma models")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="passglm",
        description="Polynomial approximate sufficient statistics for GLMs",
    )
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("PASSGLM_THREADS", "0")) or None,
                        help="worker count hint (PASSGLM_THREADS env as fallback)")
    parser.add_argument("--seed", dest="default_seed", metavar="SEED", type=int,
                        default=0, help="global default seed")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("approx", help="fit a polynomial approximation and its error bounds")
    _add_common_model_flags(p, _APPROX_MODELS)
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_approx)

    p_stats = sub.add_parser("stats", help="build or merge sufficient statistics")
    stats_sub = p_stats.add_subparsers(dest="stats_command", required=True)

    p = stats_sub.add_parser("build", help="accumulate one shard from a libsvm file")
    p.add_argument("--input", required=True)
    _add_common_model_flags(p)
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats_build)

    p = stats_sub.add_parser("merge", help="merge statistics files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats_merge)

    p = sub.add_parser("fit", help="construct the approximate posterior from statistics")
    p.add_argument("--stats", nargs="+", required=True,
                   help="statistics files (merged automatically)")
    p.add_argument("--prior", required=True, help="gaussian:SIGMA2 or flat")
    p.add_argument("--domain-radius", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("baseline", help="run a reference inference method")
    p.add_argument("--method", required=True, choices=["laplace", "mala", "sgd"])
    p.add_argument("--input", required=True)
    _add_common_model_flags(p)
    p.add_argument("--prior", default="gaussian:4")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--iters", type=int, default=20_000)
    p.add_argument("--chains", type=int, default=3)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--eta0", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.add_argument("--draws-out")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="compare two posterior files on held-out data")
    p.add_argument("--posterior", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--test")
    p.add_argument("--model", default="logit", choices=_STATS_MODELS)
    p.add_argument("--bscale", type=float, default=1.0)
    p.add_argument("--radius", type=float, default=4.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="apply a sparse random projection to a file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dim", type=int, required=True, help="output dimension")
    p.add_argument("--input-dim", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("synth", help="generate synthetic model data")
    _add_common_model_flags(p)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--theta", default="0.5", help="comma-separated or scalar broadcast")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="measure streaming throughput and shard speedup")
    _add_common_model_flags(p)
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--radius", type=float, default=4.0)
    p.add_argument("--shards", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level))
    if getattr(args, "seed", None) is None:
        args.seed = args.default_seed
    if args.command == "bench" and args.shards is None:
        args.shards = args.threads or os.cpu_count() or 1
    try:
        return args.func(args)
    except PassGlmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
