"""Built-in example chains, random model generators and the experiment harness."""
from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction as F

import numpy as np
import scipy.sparse as sp

from .aggregation import Partition, build_model
from .bounds import error_matrix
from .core import ChainError, MarkovChain, as_csr, is_irreducible
from .search import RefineConfig, SvdConfig, refine_almost_exact, svd_dir, svd_sgn

RNG_NAME = "numpy.random.PCG64"
EXPERIMENT_COLUMNS = ("algorithm", "eps", "aggregates", "err_bound", "wall_ms", "seed")


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ----------------------------------------------------------------- fixtures

@dataclass(frozen=True, eq=False)
class Fixture:
    """A small chain with its reference partition/model data (all 0-based)."""

    name: str
    chain: MarkovChain
    partition: Partition | None = None
    alpha: np.ndarray | None = None
    dynamics: np.ndarray | None = None
    A: np.ndarray | None = None
    p0: np.ndarray | None = None
    pi0: np.ndarray | None = None
    note: str = ""


def _q(rows) -> np.ndarray:
    return np.array([[float(F(x)) for x in row] for row in rows])


def _v(vals) -> np.ndarray:
    return np.array([float(F(x)) for x in vals])


def _chain_a() -> dict:
    P = _q([["1/4", "1/4", "1/2"], ["1/4", "1/2", "1/4"], ["1/2", "1/4", "1/4"]])
    return dict(chain=MarkovChain.dtmc(P), partition=Partition.from_blocks([[0, 1], [2]]))


def _fixture(name: str) -> Fixture:
    if name == "CHAIN_A":
        return Fixture(name, **_chain_a(), alpha=_v(["1/2", "1/2", "1"]),
                       dynamics=_q([["5/8", "3/8"], ["6/8", "2/8"]]),
                       pi0=_v(["2/3", "1/3"]),
                       note="stationary vector of the aggregated chain is exact")
    if name == "CHAIN_A2":
        return Fixture(name, **_chain_a(), alpha=_v(["3/4", "1/4", "1"]),
                       dynamics=_q([["9/16", "7/16"], ["12/16", "4/16"]]),
                       pi0=_v(["12/19", "7/19"]),
                       note="stationary vector of the aggregated chain is inexact")
    if name in ("CHAIN_B", "CHAIN_B_SCHUR", "CHAIN_B_WSP"):
        P = _q([["0", "1/2", "1/2"], ["1/4", "1/4", "1/2"], ["1/2", "1/4", "1/4"]])
        chain = MarkovChain.dtmc(P)
        p0 = _v(["19/30", "0", "11/30"])
        if name == "CHAIN_B":
            return Fixture(name, chain, Partition.from_blocks([[0, 1], [2]]),
                           dynamics=_q([["1/2", "1/2"], ["3/4", "1/4"]]), p0=p0,
                           note="ordinarily lumpable, no dynamic-exact weighting")
        if name == "CHAIN_B_SCHUR":
            r213, r3621 = np.sqrt(213.0), np.sqrt(3621.0)
            A = np.array([[7, 8, 10], [44, -41, 2]], dtype=float)
            A /= np.array([[r213], [r3621]])
            dyn = np.array([[1.0, 0.0], [1.0 / (4.0 * np.sqrt(17.0)), -0.25]])
            pi0 = np.array([779.0, 152.0 * np.sqrt(17.0)]) / (90.0 * r213)
            return Fixture(name, chain, A=A, dynamics=dyn, p0=p0, pi0=pi0,
                           note="two-dimensional Schur reduction with optimal start vector")
        return Fixture(name, chain, Partition.from_blocks([[0], [1, 2]]),
                       alpha=np.array([1.0, 0.4641, 0.5359]), p0=p0, pi0=_v(["19/30", "11/30"]),
                       note="best two-aggregate weighting (grid search, 4 digits)")
    if name == "CHAIN_C":
        P = _q([["0", "1/4", "3/4"], ["0", "1/2", "1/2"], ["4/9", "1/18", "1/2"]])
        return Fixture(name, MarkovChain.dtmc(P), Partition.from_blocks([[0], [1, 2]]),
                       alpha=_v(["1", "1/4", "3/4"]), dynamics=_q([["0", "1"], ["1/3", "2/3"]]),
                       note="dynamic-exact but neither ordinarily/exactly lumpable nor deflatable")
    if name == "CHAIN_CYC":
        P = np.roll(np.eye(3), 1, axis=1)
        return Fixture(name, MarkovChain.dtmc(P), p0=np.array([1.0, 0.0, 0.0]),
                       note="deterministic 3-cycle")
    raise ChainError(f"unknown fixture {name!r}; known: {', '.join(FIXTURES)}")


FIXTURES = ("CHAIN_A", "CHAIN_A2", "CHAIN_B", "CHAIN_B_SCHUR", "CHAIN_B_WSP", "CHAIN_C", "CHAIN_CYC")


def builtin_fixture(name: str) -> Fixture:
    return _fixture(name.upper())


# --------------------------------------------------------------- generators

@dataclass(frozen=True)
class GenSpec:
    n: int = 200
    m: int = 20
    block_zero_prob: float = 0.5
    perturb_magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.m <= self.n:
            raise ChainError(f"need 1 <= m <= n, got m={self.m}, n={self.n}")
        if not 0.0 <= self.block_zero_prob <= 1.0:
            raise ChainError("block_zero_prob must lie in [0, 1]")
        if self.perturb_magnitude < 0:
            raise ChainError("perturb_magnitude must be non-negative")


def equal_partition(n: int, m: int) -> Partition:
    """Contiguous aggregates of sizes ``n // m`` or ``n // m + 1`` (larger ones first)."""
    sizes = np.full(m, n // m)
    sizes[: n % m] += 1
    return Partition(np.repeat(np.arange(m), sizes), m)


def random_stochastic(g: np.random.Generator, m: int, zero_prob: float, max_tries: int = 10_000) -> np.ndarray:
    """Random irreducible stochastic m x m matrix with entries zeroed at rate ``zero_prob``."""
    for _ in range(max_tries):
        M = g.uniform(size=(m, m))
        M[g.uniform(size=(m, m)) < zero_prob] = 0.0
        rows = M.sum(axis=1)
        if (rows == 0).any():
            continue
        M /= rows[:, None]
        if is_irreducible(M):
            return M
    raise ChainError(f"no irreducible matrix after {max_tries} draws")


def gen_aggregatable(spec: GenSpec) -> tuple[MarkovChain, Partition, np.ndarray]:
    """Planted ``P = Lambda Pi A``; perturbed when ``spec.perturb_magnitude > 0``.

    The perturbation draws from a generator derived from ``spec.seed`` so
    that a spec maps to a single chain.
    """
    g = rng(spec.seed)
    Pi = random_stochastic(g, spec.m, spec.block_zero_prob)
    part = equal_partition(spec.n, spec.m)
    raw = g.uniform(size=spec.n)
    alpha = raw / np.bincount(part.omega, weights=raw)[part.omega]
    Lam = part.lambda_matrix()
    A = sp.csr_matrix((alpha, (part.omega, np.arange(spec.n))), shape=(spec.m, spec.n))
    P = as_csr(Lam @ sp.csr_matrix(Pi) @ A)
    P = as_csr(P.multiply(1.0 / np.asarray(P.sum(axis=1))))
    chain = MarkovChain.dtmc(P)
    if spec.perturb_magnitude > 0:
        chain = perturb(chain, spec.perturb_magnitude, int(g.integers(2**63)))
    return chain, part, alpha


def perturb(chain: MarkovChain, magnitude: float, seed: int) -> MarkovChain:
    """Add uniform ``[0, magnitude]`` noise to every entry, then renormalise rows."""
    if magnitude < 0:
        raise ChainError("magnitude must be non-negative")
    if magnitude == 0:
        return chain
    P = chain.dense() + rng(seed).uniform(0.0, magnitude, size=(chain.n, chain.n))
    P /= P.sum(axis=1, keepdims=True)
    return MarkovChain.dtmc(P)


def gen_exactly_lumpable(n: int, m: int, seed: int) -> tuple[MarkovChain, Partition]:
    """Random chain for which the contiguous equal partition is exactly lumpable.

    Start from ``P0(r, s) = M(r, omega(s)) / |omega(s)|`` with ``M`` a random
    stochastic n x m matrix; every block then has constant column sums. Add
    per-block noise whose rows and columns sum to zero (double centring),
    scaled to keep entries non-negative; this leaves all row sums and all
    block column sums unchanged.
    """
    if not 1 <= m <= n:
        raise ChainError(f"need 1 <= m <= n, got m={m}, n={n}")
    g = rng(seed)
    part = equal_partition(n, m)
    sizes = part.sizes()
    M = g.uniform(size=(n, m))
    M /= M.sum(axis=1, keepdims=True)
    P = M[:, part.omega] / sizes[part.omega]
    blocks = part.blocks()
    for rows in blocks:
        for cols in blocks:
            if rows.size < 2 or cols.size < 2:
                continue
            B = P[np.ix_(rows, cols)]
            D = g.uniform(-1.0, 1.0, size=B.shape)
            D -= D.mean(axis=0, keepdims=True)
            D -= D.mean(axis=1, keepdims=True)
            neg = D < 0
            scale = 0.9 * np.min(B[neg] / -D[neg]) if neg.any() else 0.0
            P[np.ix_(rows, cols)] = B + scale * D
    P = np.clip(P, 0.0, None)
    return MarkovChain.dtmc(P), part


def noisy_aggregatable_chains(seeds, n: int = 200, m: int = 20, block_zero_prob: float = 0.5,
                perturb_magnitude: float = 0.002):
    """Perturbed almost-aggregatable chains for the aggregate-count/error curve."""
    return [(seed, *gen_aggregatable(GenSpec(n, m, block_zero_prob, perturb_magnitude, seed)))
            for seed in seeds]


# --------------------------------------------------------------- experiment

@dataclass(frozen=True)
class ExperimentRow:
    algorithm: str
    eps: float
    aggregates: int
    err_bound: float
    wall_ms: float
    seed: int | None = None
    failed: str | None = None

    def as_csv(self) -> list[str]:
        def num(x):
            return "nan" if x is None else format(x, ".17g")
        return [self.algorithm, num(self.eps), str(self.aggregates), num(self.err_bound),
                num(self.wall_ms), "" if self.seed is None else str(self.seed)]


DEFAULT_ALPHA = {"svd-dir": "proportional", "svd-sgn": "proportional", "refine": "uniform"}


def run_search(chain: MarkovChain, algorithm: str, eps: float, delta: float = 0.05,
               strategy: str = "auto") -> Partition:
    if algorithm == "svd-dir":
        return svd_dir(chain, SvdConfig(eps, delta)).partition
    if algorithm == "svd-sgn":
        return svd_sgn(chain, SvdConfig(eps, delta)).partition
    if algorithm == "refine":
        return refine_almost_exact(chain, RefineConfig(eps, strategy))
    raise ChainError(f"unknown algorithm {algorithm!r}")


def _one_row(job) -> ExperimentRow:
    chain, algorithm, eps, seed, alpha, delta, strategy = job
    t0 = time.perf_counter()
    try:
        part = run_search(chain, algorithm, eps, delta, strategy)
        model = build_model(chain, part, alpha or DEFAULT_ALPHA[algorithm])
        err = error_matrix(model, chain).inf_norm
        return ExperimentRow(algorithm, eps, part.m, err, 1e3 * (time.perf_counter() - t0), seed)
    except (ChainError, ValueError, np.linalg.LinAlgError) as exc:
        return ExperimentRow(algorithm, eps, 0, float("nan"), 1e3 * (time.perf_counter() - t0),
                             seed, failed=str(exc))


def run_experiment(chains, algorithms, eps_grid, alpha=None, delta: float = 0.05,
                   strategy: str = "auto", jobs: int = 1) -> list[ExperimentRow]:
    """Evaluate every (chain, algorithm, eps) combination.

    ``chains`` holds ``(seed, chain)`` pairs; ``eps_grid`` is a list shared by
    all algorithms or a dict keyed by algorithm. Rows come back in input
    order; a failing row is kept and marked instead of aborting the run.
    """
    jobs_list = []
    for seed, chain in chains:
        for algorithm in algorithms:
            grid = eps_grid[algorithm] if isinstance(eps_grid, dict) else eps_grid
            for eps in grid:
                jobs_list.append((chain, algorithm, float(eps), seed, alpha, delta, strategy))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_one_row, jobs_list))
    return [_one_row(j) for j in jobs_list]


def write_experiment_csv(rows, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(EXPERIMENT_COLUMNS)
    for row in rows:
        writer.writerow(row.as_csv())


def summarize(rows) -> list[tuple[str, float, float, float]]:
    """Mean aggregate count and mean error per (algorithm, eps), skipping failures."""
    groups: dict[tuple[str, float], list[ExperimentRow]] = {}
    for row in rows:
        if row.failed is None:
            groups.setdefault((row.algorithm, row.eps), []).append(row)
    return [(alg, eps, float(np.mean([r.aggregates for r in rs])), float(np.mean([r.err_bound for r in rs])))
            for (alg, eps), rs in groups.items()]
