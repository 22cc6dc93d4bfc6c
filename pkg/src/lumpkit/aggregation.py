"""Weighted state-space partitions and the reduced models built from them."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.optimize import linprog

from .core import (ChainError, MarkovChain, as_csr, default_tol, is_generator,
                   is_stochastic, l1_norm, to_dense, uniformise)


class Partition:
    """Surjective map ``omega`` from states ``0..n-1`` onto aggregates ``0..m-1``."""

    __slots__ = ("omega", "m")

    def __init__(self, omega, m: int | None = None):
        omega = np.array(omega, dtype=np.int64).ravel()
        if omega.size == 0:
            raise ChainError("partition of an empty state space")
        if m is None:
            m = int(omega.max()) + 1
        if omega.min() < 0 or omega.max() >= m:
            raise ChainError(f"aggregate labels must lie in 0..{m - 1}")
        if np.unique(omega).size != m:
            missing = sorted(set(range(m)) - set(omega.tolist()))
            raise ChainError(f"partition is not surjective: aggregate {missing[0]} is empty")
        omega.setflags(write=False)
        self.omega = omega
        self.m = int(m)

    @classmethod
    def from_blocks(cls, blocks, n: int | None = None) -> "Partition":
        """Build from a list of state lists (0-based)."""
        n = sum(len(b) for b in blocks) if n is None else n
        omega = np.full(n, -1, dtype=np.int64)
        for label, block in enumerate(blocks):
            for s in block:
                if omega[s] != -1:
                    raise ChainError(f"state {s} appears in two aggregates")
                omega[s] = label
        if (omega < 0).any():
            raise ChainError(f"state {int(np.flatnonzero(omega < 0)[0])} is not assigned")
        return cls(omega, len(blocks))

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(np.arange(n), n)

    @classmethod
    def trivial(cls, n: int) -> "Partition":
        return cls(np.zeros(n, dtype=np.int64), 1)

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.omega, minlength=self.m)

    def blocks(self) -> list[np.ndarray]:
        order = np.argsort(self.omega, kind="stable")
        return np.split(order, np.cumsum(self.sizes())[:-1])

    def lambda_matrix(self) -> sp.csr_matrix:
        """The n x m 0/1 matrix whose column ``sigma`` indicates aggregate ``sigma``."""
        n = self.n
        return sp.csr_matrix((np.ones(n), (np.arange(n), self.omega)), shape=(n, self.m))

    def canonical(self) -> "Partition":
        """Relabel aggregates in order of first appearance."""
        _, first, inverse = np.unique(self.omega, return_index=True, return_inverse=True)
        rank = np.empty(self.m, dtype=np.int64)
        rank[np.argsort(first)] = np.arange(self.m)
        return Partition(rank[inverse.ravel()], self.m)

    def refines(self, other: "Partition") -> bool:
        """True if every aggregate of ``self`` lies inside one aggregate of ``other``."""
        if self.n != other.n:
            return False
        pairs = np.unique(np.stack([self.omega, other.omega]), axis=1)
        return pairs.shape[1] == self.m

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return (self.n == other.n and self.m == other.m
                and np.array_equal(self.canonical().omega, other.canonical().omega))

    def __hash__(self):
        return hash(self.canonical().omega.tobytes())

    def __repr__(self):
        return f"Partition(m={self.m}, blocks={[b.tolist() for b in self.blocks()]})"


# -------------------------------------------------------------------- alpha

def check_alpha(partition: Partition, alpha, tol: float | None = None) -> np.ndarray:
    """Validate per-state weights: non-negative, summing to 1 on every aggregate."""
    tol = default_tol() if tol is None else tol
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim == 2:
        alpha = _alpha_from_rows(partition, alpha, tol)
    if alpha.shape != (partition.n,):
        raise ChainError(f"alpha has length {alpha.shape[0]}, partition has {partition.n} states")
    if (alpha < -tol).any():
        s = int(np.argmin(alpha))
        raise ChainError(f"alpha is negative at state {s}")
    totals = np.bincount(partition.omega, weights=alpha, minlength=partition.m)
    if (totals <= tol).any():
        raise ChainError(f"aggregate {int(np.argmin(totals))} has zero total weight")
    off = np.abs(totals - 1.0)
    if (off > tol).any():
        raise ChainError(f"alpha on aggregate {int(np.argmax(off))} sums to {totals[np.argmax(off)]:.17g}, not 1")
    return np.clip(alpha, 0.0, None)


def _alpha_from_rows(partition: Partition, rows: np.ndarray, tol: float) -> np.ndarray:
    if rows.shape != (partition.m, partition.n):
        raise ChainError(f"weight matrix must be {partition.m}x{partition.n}, got {rows.shape}")
    outside = rows.copy()
    outside[partition.omega, np.arange(partition.n)] = 0.0
    if np.abs(outside).max(initial=0.0) > tol:
        sigma, s = np.unravel_index(np.argmax(np.abs(outside)), outside.shape)
        raise ChainError(f"weights of aggregate {sigma} have support outside it (state {s})")
    return rows[partition.omega, np.arange(partition.n)]


def uniform_alpha(partition: Partition) -> np.ndarray:
    return 1.0 / partition.sizes()[partition.omega]


def proportional_alpha(chain, partition: Partition, fallback_uniform: bool = False) -> np.ndarray:
    """Weights proportional to the column sums (total incoming probability).

    Generators are first uniformised at their maximal exit rate.
    """
    if isinstance(chain, MarkovChain) and not chain.is_dtmc:
        P = uniformise(chain.matrix)[0]
    else:
        P = as_csr(chain.matrix if isinstance(chain, MarkovChain) else chain)
    colsum = np.asarray(P.sum(axis=0)).ravel()
    totals = np.bincount(partition.omega, weights=colsum, minlength=partition.m)
    zero = totals <= 0
    if zero.any() and not fallback_uniform:
        raise ChainError(f"aggregate {int(np.flatnonzero(zero)[0])} receives no incoming probability")
    alpha = np.empty(partition.n)
    ok = ~zero[partition.omega]
    alpha[ok] = colsum[ok] / totals[partition.omega[ok]]
    alpha[~ok] = uniform_alpha(partition)[~ok]
    return alpha


def resolve_alpha(chain, partition: Partition, alpha) -> np.ndarray:
    """Accept ``'uniform'``, ``'proportional'`` or explicit weights."""
    if isinstance(alpha, str):
        if alpha == "uniform":
            return uniform_alpha(partition)
        if alpha == "proportional":
            return proportional_alpha(chain, partition)
        raise ChainError(f"unknown alpha mode {alpha!r}")
    if alpha is None:
        return uniform_alpha(partition)
    return check_alpha(partition, alpha)


def build_partitioned(partition: Partition, alpha, tol: float | None = None) -> sp.csr_matrix:
    """Disaggregation matrix whose row ``sigma`` is the weight vector of aggregate ``sigma``."""
    alpha = check_alpha(partition, alpha, tol)
    n = partition.n
    return sp.csr_matrix((alpha, (partition.omega, np.arange(n))), shape=(partition.m, n))


# ---------------------------------------------------------------- dynamics

def induced_dynamics(chain: MarkovChain, partition: Partition, alpha) -> np.ndarray:
    """``A P Lambda`` (or ``A Q Lambda``) for the weighted partition."""
    A = build_partitioned(partition, alpha)
    return to_dense(A @ chain.matrix @ partition.lambda_matrix())


def weighted_median(values, weights, tol: float = 1e-12) -> float:
    """Smallest value ``x`` with at most half of the weight strictly on either side."""
    values = np.asarray(values, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if values.size == 0:
        raise ChainError("weighted median of an empty set")
    if values.shape != weights.shape:
        raise ChainError("values and weights differ in length")
    if (weights <= 0).any():
        raise ChainError("weights must be positive")
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    half = 0.5 * w.sum() + tol
    distinct, start = np.unique(v, return_index=True)
    below = np.concatenate([[0.0], np.cumsum(w)])[start]
    at = np.add.reduceat(w, start)
    above = w.sum() - below - at
    ok = (below <= half) & (above <= half)
    return float(distinct[np.flatnonzero(ok)[0]])


def median_dynamics(chain: MarkovChain, partition: Partition, alpha) -> np.ndarray:
    """Reduced matrix minimising every absolute row sum of ``Pi A - A P``.

    Entry ``(rho, sigma)`` is the weighted median of ``(A P)(rho, s) / alpha(s)``
    over states ``s`` of ``sigma`` with positive weight.
    """
    alpha = check_alpha(partition, alpha)
    A = build_partitioned(partition, alpha)
    AP = to_dense(A @ chain.matrix)
    out = np.zeros((partition.m, partition.m))
    for sigma, members in enumerate(partition.blocks()):
        members = members[alpha[members] > 0]
        if members.size == 0:
            raise ChainError(f"aggregate {sigma} has no state with positive weight")
        w = alpha[members]
        ratios = AP[:, members] / w
        for rho in range(partition.m):
            out[rho, sigma] = weighted_median(ratios[rho], w)
    return out


# ------------------------------------------------------------ reduced model

@dataclass(frozen=True, eq=False)
class ReducedModel:
    """Disaggregation matrix ``A`` (m x n), reduced dynamics (m x m), start vector.

    ``partition``/``alpha`` are set in partitioned mode and ``None`` for an
    abstract ``A`` (e.g. from a Schur reduction).
    """

    A: object
    dynamics: np.ndarray
    pi0: np.ndarray | None = None
    kind: str = "dtmc"
    partition: Partition | None = None
    alpha: np.ndarray | None = None

    def __post_init__(self):
        dyn = np.atleast_2d(np.asarray(self.dynamics, dtype=float))
        m = dyn.shape[0]
        if dyn.shape != (m, m):
            raise ChainError(f"reduced dynamics must be square, got {dyn.shape}")
        if self.A.shape[0] != m:
            raise ChainError(f"A has {self.A.shape[0]} rows but dynamics is {m}x{m}")
        object.__setattr__(self, "dynamics", dyn)
        if self.pi0 is not None:
            pi0 = np.asarray(self.pi0, dtype=float).ravel()
            if pi0.shape[0] != m:
                raise ChainError(f"pi0 has length {pi0.shape[0]}, model has {m} reduced states")
            object.__setattr__(self, "pi0", pi0)

    @property
    def m(self) -> int:
        return self.dynamics.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def mode(self) -> str:
        return "abstract" if self.partition is None else "partitioned"

    def stochastic_flag(self, tol: float | None = None) -> bool:
        """Whether the dynamics is row-stochastic (DTMC) or a generator (CTMC); checked each call."""
        if self.kind == "dtmc":
            return is_stochastic(self.dynamics, tol)
        return is_generator(self.dynamics, tol)

    def with_pi0(self, pi0) -> "ReducedModel":
        return replace(self, pi0=pi0)


def aggregate_initial(p0, partition: Partition) -> np.ndarray:
    """Natural reduced start vector: probability mass of each aggregate."""
    p0 = np.asarray(p0, dtype=float).ravel()
    return np.bincount(partition.omega, weights=p0, minlength=partition.m)


def optimal_pi0(A, p0, constrain_probability: bool = False) -> np.ndarray:
    """Reduced start vector minimising ``||pi0^T A - p0^T||_1``.

    Solved as the least-absolute-deviations linear program with one slack
    per state; optionally restricted to probability vectors.
    """
    A = to_dense(A)
    p0 = np.asarray(p0, dtype=float).ravel()
    m, n = A.shape
    if constrain_probability and m == 0:
        raise ChainError("no probability vector exists in dimension 0")
    # variables: pi0 (m), slack (n); minimise sum(slack)
    c = np.concatenate([np.zeros(m), np.ones(n)])
    eye = np.eye(n)
    A_ub = np.block([[A.T, -eye], [-A.T, -eye]])
    b_ub = np.concatenate([p0, -p0])
    lo = 0.0 if constrain_probability else None
    bounds = [(lo, None)] * m + [(0.0, None)] * n
    A_eq = b_eq = None
    if constrain_probability:
        A_eq = np.concatenate([np.ones(m), np.zeros(n)])[None, :]
        b_eq = np.array([1.0])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise ChainError(f"initial-vector LP failed: {res.message}")
    return _polish_vertex(A, p0, res.x[:m], constrain_probability)


def _polish_vertex(A: np.ndarray, p0: np.ndarray, pi0: np.ndarray, probability: bool,
                   active_tol: float = 1e-7) -> np.ndarray:
    """Re-solve the active constraints of an LP solution to full precision.

    The solver stops at its feasibility tolerance; the optimum itself is
    pinned by the residuals (and, if constrained, the coordinates) that are
    zero there, so solving those equalities exactly sharpens it.
    """
    m = A.shape[0]
    resid = pi0 @ A - p0
    zero_states = np.flatnonzero(np.abs(resid) <= active_tol)
    rows = [A[:, zero_states].T]
    rhs = [p0[zero_states]]
    if probability:
        zero_coords = np.flatnonzero(pi0 <= active_tol)
        rows += [np.eye(m)[zero_coords], np.ones((1, m))]
        rhs += [np.zeros(zero_coords.size), np.ones(1)]
    lhs = np.vstack(rows)
    target = np.concatenate(rhs)
    if lhs.shape[0] == 0 or np.linalg.matrix_rank(lhs) < m:
        return pi0
    cand = np.linalg.lstsq(lhs, target, rcond=None)[0]
    if np.abs(lhs @ cand - target).max() > active_tol:
        return pi0
    if probability and (cand < 0).any():
        return pi0
    before = np.abs(resid).sum()
    after = np.abs(cand @ A - p0).sum()
    return cand if after <= before + active_tol else pi0


def compatibility_check(p0, A, partition: Partition, tol: float | None = None) -> tuple[bool, float]:
    """Whether ``p0^T Lambda A = p0^T``; returns the verdict and the L1 residual."""
    tol = default_tol() if tol is None else tol
    p0 = np.asarray(p0, dtype=float).ravel()
    back = (partition.lambda_matrix().T @ p0) @ to_dense(A)
    residual = l1_norm(back - p0)
    return residual <= tol, residual


def reduced_trajectory(model: ReducedModel, k: int) -> np.ndarray:
    """Reduced vectors ``pi_0 .. pi_k`` as rows."""
    if model.pi0 is None:
        raise ChainError("model has no reduced start vector")
    out = np.empty((k + 1, model.m))
    out[0] = model.pi0
    for j in range(1, k + 1):
        out[j] = out[j - 1] @ model.dynamics
    return out


def lift(model: ReducedModel, pi) -> np.ndarray:
    """Disaggregate reduced vector(s): ``pi^T A``."""
    A = model.A
    pi = np.asarray(pi, dtype=float)
    if sp.issparse(A):
        return np.asarray((A.T @ pi.T).T)
    return pi @ A


def reduced_transient_discrete(model: ReducedModel, k: int) -> tuple[np.ndarray, np.ndarray]:
    """``(pi_k, pi_k^T A)`` for the reduced DTMC."""
    pi_k = reduced_trajectory(model, k)[-1]
    return pi_k, lift(model, pi_k)


def reduced_transient_continuous(model: ReducedModel, t: float) -> tuple[np.ndarray, np.ndarray]:
    """``(pi_t, pi_t^T A)`` with ``pi_t^T = pi_0^T e^{Theta t}`` computed densely."""
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise ChainError(f"time must be finite and non-negative, got {t!r}")
    if model.pi0 is None:
        raise ChainError("model has no reduced start vector")
    pi_t = model.pi0 @ expm(model.dynamics * t)
    return pi_t, lift(model, pi_t)


def build_model(chain: MarkovChain, partition: Partition, alpha="uniform",
                dynamics: str = "induced", p0=None, pi0="natural") -> ReducedModel:
    """Assemble a partitioned reduced model.

    ``pi0`` is ``'natural'`` (aggregate masses of ``p0``), ``'optimal'``,
    ``'optimal-probability'`` or an explicit vector.
    """
    alpha = resolve_alpha(chain, partition, alpha)
    A = build_partitioned(partition, alpha)
    if dynamics == "induced":
        dyn = induced_dynamics(chain, partition, alpha)
    elif dynamics == "median":
        dyn = median_dynamics(chain, partition, alpha)
    else:
        raise ChainError(f"unknown dynamics scheme {dynamics!r}")
    start = None
    if isinstance(pi0, str):
        if p0 is not None:
            if pi0 == "natural":
                start = aggregate_initial(p0, partition)
            elif pi0 == "optimal":
                start = optimal_pi0(A, p0)
            elif pi0 == "optimal-probability":
                start = optimal_pi0(A, p0, constrain_probability=True)
            else:
                raise ChainError(f"unknown start-vector rule {pi0!r}")
    elif pi0 is not None:
        start = np.asarray(pi0, dtype=float)
    return ReducedModel(A, dyn, start, chain.kind, partition, alpha)
