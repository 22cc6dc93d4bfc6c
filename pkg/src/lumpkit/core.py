"""Markov chain containers, validation, norms and exact solvers.

The solvers here are the ground truth against which every approximation
error is measured, so they favour accuracy over speed.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.special import gammaln

DEFAULT_TOL = 1e-9
DENSE_STATIONARY_LIMIT = 200


class ChainError(ValueError):
    """A domain error: malformed chain, violated precondition, reducible input."""


def default_tol() -> float:
    """Tolerance for stochasticity checks, overridable via ``LUMPKIT_TOL``."""
    env = os.environ.get("LUMPKIT_TOL")
    if env:
        try:
            return float(env)
        except ValueError:
            raise ChainError(f"LUMPKIT_TOL is not a number: {env!r}") from None
    return DEFAULT_TOL


def as_csr(M) -> sp.csr_matrix:
    """Canonical sparse form: float CSR with sorted indices and no stored zeros."""
    out = sp.csr_matrix(M, dtype=float, copy=True)
    out.eliminate_zeros()
    out.sort_indices()
    return out


def to_dense(M) -> np.ndarray:
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M, dtype=float)


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """A DTMC (``kind='dtmc'``, row-stochastic ``matrix``) or a CTMC
    (``kind='ctmc'``, generator ``matrix``) over states ``0..n-1``.
    """

    matrix: sp.csr_matrix
    kind: str = "dtmc"

    def __post_init__(self):
        if self.kind not in ("dtmc", "ctmc"):
            raise ChainError(f"unknown chain kind {self.kind!r}")
        M = as_csr(self.matrix)
        if M.shape[0] != M.shape[1]:
            raise ChainError(f"matrix must be square, got {M.shape}")
        if M.shape[0] < 1:
            raise ChainError("state space must be non-empty")
        object.__setattr__(self, "matrix", M)

    @classmethod
    def dtmc(cls, P) -> "MarkovChain":
        return cls(P, "dtmc")

    @classmethod
    def ctmc(cls, Q) -> "MarkovChain":
        return cls(Q, "ctmc")

    @classmethod
    def infer(cls, M, tol: float | None = None) -> "MarkovChain":
        """Guess the kind from row sums (close to 1 for a DTMC, to 0 for a CTMC)."""
        tol = default_tol() if tol is None else tol
        rows = np.asarray(as_csr(M).sum(axis=1)).ravel()
        if np.all(np.abs(rows - 1.0) <= tol):
            return cls(M, "dtmc")
        if np.all(np.abs(rows) <= tol):
            return cls(M, "ctmc")
        raise ChainError("cannot infer chain kind: row sums are neither all 1 nor all 0")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_dtmc(self) -> bool:
        return self.kind == "dtmc"

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __eq__(self, other):
        if not isinstance(other, MarkovChain):
            return NotImplemented
        if self.kind != other.kind or self.matrix.shape != other.matrix.shape:
            return False
        return (self.matrix != other.matrix).nnz == 0

    __hash__ = None


def _matrix_of(chain_or_matrix) -> sp.csr_matrix:
    if isinstance(chain_or_matrix, MarkovChain):
        return chain_or_matrix.matrix
    return as_csr(chain_or_matrix)


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Violation:
    what: str
    row: int
    col: int | None
    residual: float

    def __str__(self):
        where = f"row {self.row}" if self.col is None else f"entry ({self.row}, {self.col})"
        return f"{self.what} at {where}: residual {self.residual:.17g}"


@dataclass(frozen=True)
class ValidationReport:
    kind: str
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return f"ok ({self.kind})"
        return "\n".join(str(v) for v in self.violations)


def validate(chain: MarkovChain, tol: float | None = None) -> ValidationReport:
    """Check the defining invariants of ``chain``; never raises.

    Row and column indices in the report are 0-based.
    """
    tol = default_tol() if tol is None else tol
    M = chain.matrix.tocoo()
    found = []
    bad = ~np.isfinite(M.data)
    for r, c, v in zip(M.row[bad], M.col[bad], M.data[bad]):
        found.append(Violation("non-finite entry", int(r), int(c), float("inf")))
    if chain.is_dtmc:
        neg = M.data < -tol
        for r, c, v in zip(M.row[neg], M.col[neg], M.data[neg]):
            found.append(Violation("negative probability", int(r), int(c), float(-v)))
        target = 1.0
    else:
        neg = (M.data < -tol) & (M.row != M.col)
        for r, c, v in zip(M.row[neg], M.col[neg], M.data[neg]):
            found.append(Violation("negative off-diagonal rate", int(r), int(c), float(-v)))
        target = 0.0
    rows = np.asarray(chain.matrix.sum(axis=1)).ravel()
    for r in np.flatnonzero(np.abs(rows - target) > tol):
        found.append(Violation("row sum", int(r), None, float(abs(rows[r] - target))))
    return ValidationReport(chain.kind, tuple(found))


def is_stochastic(M, tol: float | None = None) -> bool:
    tol = default_tol() if tol is None else tol
    D = to_dense(M)
    return bool(D.size and np.all(D >= -tol) and np.all(np.abs(D.sum(axis=1) - 1) <= tol))


def is_generator(M, tol: float | None = None) -> bool:
    tol = default_tol() if tol is None else tol
    D = to_dense(M)
    off = D - np.diag(np.diag(D))
    return bool(D.size and np.all(off >= -tol) and np.all(np.abs(D.sum(axis=1)) <= tol))


def is_probability(v, tol: float | None = None) -> bool:
    tol = default_tol() if tol is None else tol
    v = np.asarray(v, dtype=float)
    return bool(v.size and np.all(v >= -tol) and abs(v.sum() - 1) <= tol)


# -------------------------------------------------------------------- norms

def l1_norm(v) -> float:
    return float(np.abs(np.asarray(v, dtype=float)).sum())


def inf_norm(M) -> float:
    """Maximum absolute row sum."""
    if sp.issparse(M):
        if M.shape[0] == 0:
            return 0.0
        return float(np.asarray(abs(M).sum(axis=1)).max(initial=0.0))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.abs(M).sum(axis=1).max(initial=0.0))


def abs_row_sums(M) -> np.ndarray:
    if sp.issparse(M):
        return np.asarray(abs(M).sum(axis=1)).ravel()
    return np.abs(np.atleast_2d(np.asarray(M, dtype=float))).sum(axis=1)


def weighted_abs_inner(v, M) -> float:
    """``<|v|, |M| 1>``, the sharper form of ``||v^T M||_1 <= ||v||_1 ||M||_inf``."""
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != M.shape[0]:
        raise ChainError(f"dimension mismatch: vector of length {v.shape[0]}, matrix with {M.shape[0]} rows")
    return float(np.abs(v) @ abs_row_sums(M))


# ---------------------------------------------------------------- transient

def _check_vector(p0, n: int) -> np.ndarray:
    p0 = np.asarray(p0, dtype=float).ravel()
    if p0.shape[0] != n:
        raise ChainError(f"initial vector has length {p0.shape[0]}, chain has {n} states")
    return p0


def dtmc_transient(P, p0, k: int) -> np.ndarray:
    """``p_k^T = p_0^T P^k`` by ``k`` sparse vector-matrix products."""
    return dtmc_trajectory(P, p0, k)[-1]


def dtmc_trajectory(P, p0, k: int) -> np.ndarray:
    """Rows ``p_0, ..., p_k`` of the exact transient solution."""
    if k < 0:
        raise ChainError("step count must be non-negative")
    PT = _matrix_of(P).T.tocsr()
    p = _check_vector(p0, PT.shape[0])
    out = np.empty((k + 1, p.shape[0]))
    out[0] = p
    for j in range(1, k + 1):
        out[j] = PT @ out[j - 1]
    return out


def uniformise(Q, rate: float | None = None) -> tuple[sp.csr_matrix, float]:
    """Embed a generator into the stochastic matrix ``I + Q/rate``.

    Without ``rate`` the maximal exit rate is used (1 when ``Q`` is zero).
    """
    Q = _matrix_of(Q)
    exit_rate = float(np.abs(Q.diagonal()).max(initial=0.0))
    if rate is None:
        rate = exit_rate if exit_rate > 0 else 1.0
    elif not np.isfinite(rate) or rate <= 0 or rate < exit_rate:
        raise ChainError(f"uniformisation rate {rate!r} is below the maximal exit rate {exit_rate!r}")
    P = sp.identity(Q.shape[0], format="csr") + Q / rate
    return as_csr(P), float(rate)


def poisson_window(lam: float, eps: float) -> tuple[int, np.ndarray]:
    """Left truncation point and Poisson(lam) weights up to the right point.

    Each discarded tail carries mass at most ``eps/2``.
    """
    hi = int(np.ceil(lam + 12.0 * np.sqrt(lam) + 40.0))
    ks = np.arange(hi + 1, dtype=float)
    w = np.exp(ks * np.log(lam) - lam - gammaln(ks + 1.0))
    left_tail = np.cumsum(w)
    # number of leading terms whose total mass stays within eps/2
    L = int(np.searchsorted(left_tail, eps / 2.0, side="right"))
    right_tail = np.cumsum(w[::-1])[::-1]  # right_tail[j] = sum_{i >= j} w[i]
    beyond = np.flatnonzero(right_tail <= eps / 2.0)
    R = int(beyond[0]) - 1 if beyond.size else hi
    R = max(R, L)
    return L, w[L:R + 1]


def ctmc_transient(Q, p0, t: float, eps: float = 1e-12, rate: float | None = None,
                   full_output: bool = False):
    """Transient distribution ``p_0^T e^{Qt}`` by uniformisation.

    The Poisson sum is truncated on both sides with at most ``eps/2`` mass
    dropped per side. The result is not renormalised; with
    ``full_output=True`` the dropped mass is returned as well.
    """
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise ChainError(f"time must be finite and non-negative, got {t!r}")
    if eps <= 0:
        raise ChainError("truncation error must be positive")
    Qm = _matrix_of(Q)
    p = _check_vector(p0, Qm.shape[0]).copy()
    if t == 0.0 or Qm.nnz == 0:
        return (p, 0.0) if full_output else p
    P, q = uniformise(Qm, rate)
    L, w = poisson_window(q * t, eps)
    PT = P.T.tocsr()
    acc = np.zeros_like(p)
    for _ in range(L):
        p = PT @ p
    for j, wj in enumerate(w):
        acc += wj * p
        if j + 1 < w.shape[0]:
            p = PT @ p
    leftover = max(0.0, 1.0 - float(w.sum()))
    return (acc, leftover) if full_output else acc


# --------------------------------------------------------------- stationary

def is_irreducible(chain) -> bool:
    """True iff the transition graph is strongly connected."""
    M = _matrix_of(chain)
    n_comp, _ = connected_components(M, directed=True, connection="strong")
    return n_comp == 1


def stationary(chain: MarkovChain, tol: float | None = None, max_iter: int = 1_000_000) -> np.ndarray:
    """Unique stationary distribution of an irreducible chain.

    Small chains use a dense linear solve. Larger ones use power iteration
    on the lazy chain ``(I + P)/2``, which has the same fixed point and is
    aperiodic.
    """
    tol = default_tol() if tol is None else tol
    if not isinstance(chain, MarkovChain):
        chain = MarkovChain.infer(chain)
    if not is_irreducible(chain):
        raise ChainError("chain is reducible; stationary distribution is not unique")
    P = chain.matrix if chain.is_dtmc else uniformise(chain.matrix)[0]
    n = chain.n
    if n <= DENSE_STATIONARY_LIMIT:
        lhs = P.toarray().T - np.eye(n)
        lhs[-1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        p = np.linalg.solve(lhs, rhs)
    else:
        lazy = (0.5 * (sp.identity(n, format="csr") + P)).T.tocsr()
        p = np.full(n, 1.0 / n)
        for _ in range(max_iter):
            nxt = lazy @ p
            nxt /= nxt.sum()
            if l1_norm(nxt - p) <= tol * 1e-2:
                p = nxt
                break
            p = nxt
        else:
            raise ChainError(f"power iteration did not converge within {max_iter} iterations")
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    residual = l1_norm(P.T @ p - p)
    if residual > max(tol, 1e-12):
        raise ChainError(f"stationary residual {residual:.3g} exceeds tolerance {tol:.3g}")
    return p
