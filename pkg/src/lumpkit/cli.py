"""Command-line interface: ``lumpkit <subcommand> ...``.

Exit status is 0 on success, 1 on a domain error (bad file, violated
precondition, failed check) and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .aggregation import (ReducedModel, aggregate_initial, build_model,
                          optimal_pi0)
from .benchlab import (FIXTURES, RNG_NAME, GenSpec, builtin_fixture,
                       gen_aggregatable, gen_exactly_lumpable, rng,
                       run_experiment, write_experiment_csv)
from .bounds import (actual_error, actual_error_curve, ctmc_bounds, dtmc_bounds,
                     error_matrix, stationary_bound)
from .core import (ChainError, MarkovChain, ctmc_transient, default_tol,
                   dtmc_transient, stationary, validate)
from .io import (fmt, read_matrix, read_model, read_partition, read_vector,
                 write_json, write_matrix, write_model, write_partition,
                 write_vector)
from .lumpability import (almost_exact_eps, coarsest_exactly_lumpable, is_aggregatable,
                          is_deflatable, is_dynamic_exact, is_exactly_lumpable,
                          is_ordinarily_lumpable, is_strictly_lumpable)
from .schur import ORDERINGS, schur_dynamic_exact
from .search import (RefineConfig, SvdConfig, err_bound, refine_almost_exact,
                     svd_dir, svd_sgn)


class Run:
    """Collects the reproducibility manifest written next to file outputs."""

    def __init__(self, args):
        self.args = args
        self.t0 = time.perf_counter()

    def manifest(self, inputs=(), seed=None) -> dict:
        flags = {k: v for k, v in vars(self.args).items() if k != "func" and not callable(v)}
        return {"tool": "lumpkit", "version": __version__, "subcommand": self.args.command,
                "flags": json.loads(json.dumps(flags, default=str)),
                "inputs": [str(p) for p in inputs if p is not None],
                "seed": seed, "rng": RNG_NAME if seed is not None else None,
                "wall_ms": 1e3 * (time.perf_counter() - self.t0)}

    def sidecar(self, out, inputs=(), seed=None):
        if out not in (None, "-"):
            write_json(self.manifest(inputs, seed), str(out) + ".manifest.json")


def _chain(args) -> MarkovChain:
    M = read_matrix(args.matrix)
    if args.kind:
        return MarkovChain(M, args.kind)
    return MarkovChain.infer(M, args.tol)


def _alpha(spec, chain, partition):
    if spec in (None, "uniform", "proportional"):
        return spec or "uniform"
    return read_vector(spec)


# ----------------------------------------------------------------- commands

def cmd_validate(args, run):
    chain = _chain(args)
    report = validate(chain, args.tol)
    print(report)
    return 0 if report.ok else 1


def cmd_transient(args, run):
    chain = _chain(args)
    p0 = read_vector(args.p0)
    if chain.is_dtmc:
        if args.k is None:
            raise ChainError("a DTMC needs --k")
        p = dtmc_transient(chain.matrix, p0, args.k)
    else:
        if args.t is None:
            raise ChainError("a CTMC needs --t")
        p, leftover = ctmc_transient(chain.matrix, p0, args.t, args.eps, full_output=True)
        print(f"# leftover_mass={fmt(leftover)}", file=sys.stderr)
    write_vector(p, args.out)
    run.sidecar(args.out, [args.matrix, args.p0])
    return 0


def cmd_stationary(args, run):
    chain = _chain(args)
    write_vector(stationary(chain, args.tol), args.out)
    run.sidecar(args.out, [args.matrix])
    return 0


def cmd_aggregate(args, run):
    chain = _chain(args)
    partition = read_partition(args.partition)
    p0 = read_vector(args.p0) if args.p0 else None
    model = build_model(chain, partition, _alpha(args.alpha, chain, partition),
                        args.dynamics, p0, args.pi0)
    write_model(model, args.out, {"run": run.manifest([args.matrix, args.partition, args.p0])})
    print(f"m={model.m} err_bound={fmt(error_matrix(model, chain).inf_norm)}")
    return 0


def _start_vector(model: ReducedModel, p0, rule):
    if rule is None:
        if model.pi0 is not None:
            return model.pi0
        rule = "natural" if model.partition is not None else "optimal"
    if rule == "natural":
        if model.partition is None:
            raise ChainError("natural start vector needs a partitioned model")
        return aggregate_initial(p0, model.partition)
    if rule == "optimal":
        return optimal_pi0(model.A, p0)
    if rule == "optimal-probability":
        return optimal_pi0(model.A, p0, constrain_probability=True)
    return read_vector(rule)


def cmd_bounds(args, run):
    chain = _chain(args)
    model = read_model(args.model)
    p0 = read_vector(args.p0)
    model = model.with_pi0(_start_vector(model, p0, args.pi0))
    rows = []
    if chain.is_dtmc:
        if args.k is None:
            raise ChainError("a DTMC needs --k")
        rep = dtmc_bounds(model, chain, p0, args.k, args.tol)
        actual = actual_error_curve(chain, model, p0, args.k)
        header = ["k", "initial", "precise", "general", "simple", "actual"]
        for k in rep.steps:
            simple = rep.simple[k] if rep.simple is not None else float("nan")
            rows.append([str(k), fmt(rep.initial_error), fmt(rep.precise[k]),
                         fmt(rep.general[k]), fmt(simple), fmt(actual[k])])
        if rep.simple_reason:
            print(f"# simple bound omitted: {rep.simple_reason}", file=sys.stderr)
    else:
        if args.t is None:
            raise ChainError("a CTMC needs --t")
        rep = ctmc_bounds(model, chain, p0, args.t, args.quad_steps, args.tol)
        stride = max(1, args.quad_steps // max(1, args.points))
        picks = list(range(0, args.quad_steps + 1, stride))
        if picks[-1] != args.quad_steps:
            picks.append(args.quad_steps)
        header = ["t", "initial", "precise", "general", "simple", "actual"]
        for i in picks:
            t = rep.times[i]
            simple = rep.simple[i] if rep.simple is not None else float("nan")
            rows.append([fmt(t), fmt(rep.initial_error), fmt(rep.precise_estimate[i]),
                         fmt(rep.general[i]), fmt(simple), fmt(actual_error(chain, model, p0, t=t))])
        print("# precise column is a quadrature estimate, not a certified bound", file=sys.stderr)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out not in (None, "-") else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    run.sidecar(args.out, [args.matrix, args.model, args.p0])
    return 0


def cmd_stationary_bound(args, run):
    chain = _chain(args)
    model = read_model(args.model)
    if args.pi:
        pi = read_vector(args.pi)
    else:
        kind = "dtmc" if chain.is_dtmc else "ctmc"
        pi = stationary(MarkovChain(model.dynamics, kind), args.tol)
    rep = stationary_bound(model, chain, pi)
    print(f"measure={fmt(rep.measure)} bound={fmt(rep.bound)} "
          f"dynamic_term={fmt(rep.dynamic_term)} residual_term={fmt(rep.residual_term)}")
    return 0


def cmd_lumpability(args, run):
    chain = _chain(args)
    partition = read_partition(args.partition)
    alpha_spec = _alpha(args.alpha, chain, partition)
    model = build_model(chain, partition, alpha_spec)
    reports = [is_ordinarily_lumpable(chain, partition, args.tol),
               is_exactly_lumpable(chain, partition, args.tol),
               is_strictly_lumpable(chain, partition, args.tol)]
    if chain.is_dtmc:
        reports += [is_deflatable(chain, partition, model.alpha, args.tol),
                    is_aggregatable(chain, partition, model.alpha, args.tol)]
    reports.append(is_dynamic_exact(model, chain, args.tol))
    for rep in reports:
        print(rep)
    print(f"almost-exact-eps: {fmt(almost_exact_eps(chain, partition))}")
    return 0


def cmd_coarsest(args, run):
    chain = _chain(args)
    part = coarsest_exactly_lumpable(chain)
    write_partition(part, args.out)
    run.sidecar(args.out, [args.matrix])
    if args.out not in (None, "-"):
        print(f"m={part.m}")
    return 0


def cmd_search(args, run):
    chain = _chain(args)
    if args.algorithm == "svd-dir":
        part = svd_dir(chain, SvdConfig(args.eps, args.delta, args.fixed_l)).partition
    elif args.algorithm == "svd-sgn":
        part = svd_sgn(chain, SvdConfig(args.eps, args.delta, args.fixed_l)).partition
    else:
        part = refine_almost_exact(chain, RefineConfig(args.eps, args.strategy))
    alpha = args.alpha or ("uniform" if args.algorithm == "refine" else "proportional")
    bound = err_bound(chain, part, alpha)
    write_partition(part, args.out)
    run.sidecar(args.out, [args.matrix])
    summary = f"m={part.m} err_bound={fmt(bound)}"
    print(summary, file=sys.stderr if args.out in (None, "-") else sys.stdout)
    return 0


def cmd_schur(args, run):
    chain = _chain(args)
    red = schur_dynamic_exact(chain, args.dim, args.ordering)
    pi0 = optimal_pi0(red.A, read_vector(args.p0)) if args.p0 else None
    write_model(red.to_model(pi0), args.out,
                {"achieved_dim": red.achieved_dim, "residual": red.residual,
                 "run": run.manifest([args.matrix, args.p0])})
    print(f"achieved_dim={red.achieved_dim} residual={fmt(red.residual)}")
    return 0


def cmd_gen(args, run):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.family == "aggregatable":
        chain, part, alpha = gen_aggregatable(GenSpec(args.n, args.m, args.block_zero,
                                                      args.perturb, args.seed))
        write_vector(alpha, out / "alpha.txt")
    else:
        chain, part = gen_exactly_lumpable(args.n, args.m, args.seed)
    write_matrix(chain.matrix, out / "matrix.mtx")
    write_partition(part, out / "partition.json")
    write_json(run.manifest(seed=args.seed), out / "manifest.json")
    print(f"n={chain.n} m={part.m}")
    return 0


def _parse_grid(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ChainError(f"bad eps grid {text!r}") from None


def cmd_experiment(args, run):
    if args.matrix:
        chains = [(None, MarkovChain.infer(read_matrix(p), args.tol)) for p in args.matrix]
    else:
        seeds = rng(args.seed).integers(2**63, size=args.chains)
        chains = [(int(s), gen_aggregatable(GenSpec(args.n, args.m, args.block_zero,
                                                    args.perturb, int(s)))[0]) for s in seeds]
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    grid = {a: _parse_grid(args.eps_grid) for a in algorithms}
    for item in args.grid or []:
        name, _, values = item.partition("=")
        if name not in grid:
            raise ChainError(f"--grid names unknown algorithm {name!r}")
        grid[name] = _parse_grid(values)
    rows = run_experiment(chains, algorithms, grid, args.alpha, args.delta, args.strategy, args.jobs)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out not in (None, "-") else sys.stdout
    try:
        write_experiment_csv(rows, out)
    finally:
        if out is not sys.stdout:
            out.close()
    for row in rows:
        if row.failed:
            print(f"# failed: {row.algorithm} eps={fmt(row.eps)} seed={row.seed}: {row.failed}",
                  file=sys.stderr)
    run.sidecar(args.out, args.matrix or [], args.seed if not args.matrix else None)
    return 0


def cmd_fixture(args, run):
    fx = builtin_fixture(args.name)
    if args.out in (None, "-"):
        write_matrix(fx.chain.matrix, "-", comment=f"{fx.name}: {fx.note}")
        return 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(fx.chain.matrix, out / "matrix.mtx", comment=f"{fx.name}: {fx.note}")
    if fx.partition is not None:
        write_partition(fx.partition, out / "partition.json")
    if fx.alpha is not None:
        write_vector(fx.alpha, out / "alpha.txt")
    if fx.p0 is not None:
        write_vector(fx.p0, out / "p0.txt")
    if fx.A is not None and fx.dynamics is not None:
        write_model(ReducedModel(fx.A, fx.dynamics, fx.pi0, fx.chain.kind), out / "model")
    elif fx.partition is not None and fx.alpha is not None:
        model = build_model(fx.chain, fx.partition, fx.alpha, p0=fx.p0,
                            pi0=fx.pi0 if fx.pi0 is not None else "natural")
        write_model(model, out / "model")
    write_json(run.manifest(), out / "manifest.json")
    print(f"{fx.name}: wrote {out}")
    return 0


# ------------------------------------------------------------------- parser

def _add_chain_args(p):
    p.add_argument("matrix", help="MatrixMarket file of P or Q ('-' for stdin)")
    p.add_argument("--kind", choices=["dtmc", "ctmc"], help="override kind inference from row sums")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lumpkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lumpkit {__version__}")
    parser.add_argument("--tol", type=float, default=None,
                        help="tolerance for stochasticity checks (default: $LUMPKIT_TOL or 1e-9)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("validate", help="check stochasticity / generator invariants")
    _add_chain_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("transient", help="exact transient distribution")
    _add_chain_args(p)
    p.add_argument("--p0", required=True)
    p.add_argument("--k", type=int, help="step count (DTMC)")
    p.add_argument("--t", type=float, help="time (CTMC)")
    p.add_argument("--eps", type=float, default=1e-12, help="Poisson truncation mass")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_transient)

    p = sub.add_parser("stationary", help="stationary distribution")
    _add_chain_args(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_stationary)

    p = sub.add_parser("aggregate", help="build a reduced model from a partition and weights")
    _add_chain_args(p)
    p.add_argument("--partition", required=True)
    p.add_argument("--alpha", help="'uniform' (default), 'proportional' or a weight-vector file")
    p.add_argument("--dynamics", choices=["induced", "median"], default="induced")
    p.add_argument("--p0")
    p.add_argument("--pi0", default="natural",
                   help="'natural', 'optimal', 'optimal-probability' (needs --p0)")
    p.add_argument("--out", required=True, help="output model directory")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("bounds", help="transient error bounds as CSV")
    _add_chain_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--p0", required=True)
    p.add_argument("--pi0", help="'natural', 'optimal', 'optimal-probability' or a file "
                                 "(default: the model's own start vector)")
    p.add_argument("--k", type=int, help="last step (DTMC)")
    p.add_argument("--t", type=float, help="end time (CTMC)")
    p.add_argument("--quad-steps", type=int, default=1000)
    p.add_argument("--points", type=int, default=10, help="CSV rows for a CTMC")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("stationary-bound", help="stationary error measure and bound")
    _add_chain_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--pi", help="reduced vector (default: stationary vector of the reduced chain)")
    p.set_defaults(func=cmd_stationary_bound)

    p = sub.add_parser("lumpability", help="check lumpability properties of a partition")
    _add_chain_args(p)
    p.add_argument("--partition", required=True)
    p.add_argument("--alpha", help="'uniform' (default), 'proportional' or a weight-vector file")
    p.set_defaults(func=cmd_lumpability)

    p = sub.add_parser("coarsest", help="coarsest exactly lumpable partition")
    _add_chain_args(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_coarsest)

    p = sub.add_parser("search", help="search for a low-error partition")
    algs = p.add_subparsers(dest="algorithm", required=True, metavar="ALGORITHM")
    for name in ("svd-dir", "svd-sgn", "refine"):
        q = algs.add_parser(name)
        _add_chain_args(q)
        q.add_argument("--eps", type=float, required=True)
        q.add_argument("--alpha", choices=["uniform", "proportional"],
                       help="weights used for the reported error bound")
        q.add_argument("--out", default="-")
        if name == "refine":
            q.add_argument("--strategy", choices=["hierarchical", "greedy", "auto"], default="auto")
        else:
            q.add_argument("--delta", type=float, default=0.05)
            q.add_argument("--fixed-l", type=int, default=None)
        q.set_defaults(func=cmd_search)

    p = sub.add_parser("schur", help="dynamic-exact reduction via the real Schur form")
    _add_chain_args(p)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--ordering", choices=ORDERINGS, default="descending-modulus")
    p.add_argument("--p0", help="compute the optimal reduced start vector for this p0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_schur)

    p = sub.add_parser("gen", help="generate a random structured chain")
    p.add_argument("family", choices=["aggregatable", "exactly-lumpable"])
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--block-zero", type=float, default=0.5)
    p.add_argument("--perturb", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("experiment", help="aggregate-count / error sweep as CSV")
    p.add_argument("--matrix", action="append", help="chain file (repeatable); default: generate")
    p.add_argument("--chains", type=int, default=10)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--block-zero", type=float, default=0.5)
    p.add_argument("--perturb", type=float, default=0.002)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--algorithms", default="svd-dir,refine")
    p.add_argument("--eps-grid", default="0.1,0.2,0.3,0.4")
    p.add_argument("--grid", action="append", metavar="ALG=E1,E2,...",
                   help="per-algorithm eps grid overriding --eps-grid")
    p.add_argument("--alpha", choices=["uniform", "proportional"])
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--strategy", choices=["hierarchical", "greedy", "auto"], default="auto")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("fixture", help="emit a built-in example chain")
    p.add_argument("name", choices=FIXTURES, type=str.upper)
    p.add_argument("--out", help="directory for the full bundle (default: matrix to stdout)")
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.tol is None:
        try:
            args.tol = default_tol()
        except ChainError as exc:
            print(f"lumpkit: error: {exc}", file=sys.stderr)
            return 1
    try:
        return args.func(args, Run(args))
    except (ChainError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"lumpkit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
