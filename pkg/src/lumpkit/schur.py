"""Dynamic-exact reductions through the real Schur decomposition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import schur
from scipy.linalg.lapack import dtrexc

from .aggregation import ReducedModel
from .core import ChainError, MarkovChain, inf_norm, stationary, uniformise

ORDERINGS = ("descending-modulus", "drop-stationary", "as-computed")
TIE_TOL = 1e-9
RESIDUAL_LIMIT = 1e-8


@dataclass(frozen=True)
class SchurReduction:
    """Orthonormal-row ``A`` (k x n) and dynamics (k x k) with ``dynamics A = A P``."""

    A: np.ndarray
    dynamics: np.ndarray
    achieved_dim: int
    residual: float
    kind: str = "dtmc"

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.dynamics)

    def to_model(self, pi0=None) -> ReducedModel:
        return ReducedModel(self.A, self.dynamics, pi0, self.kind)


def _blocks(T: np.ndarray) -> list[tuple[int, int]]:
    """(start, size) of the diagonal blocks of a quasi-triangular matrix."""
    n = T.shape[0]
    out, i = [], 0
    while i < n:
        size = 2 if i + 1 < n and T[i + 1, i] != 0.0 else 1
        out.append((i, size))
        i += size
    return out


def _block_eigenvalue(T: np.ndarray, start: int, size: int) -> complex:
    if size == 1:
        return complex(T[start, start])
    return complex(np.linalg.eigvals(T[start:start + 2, start:start + 2])[0])


def _reorder(T: np.ndarray, U: np.ndarray, m: int, kind: str, ordering: str, rate: float):
    """Move blocks to the front until the leading ``m`` rows are settled."""
    stationary_value = 1.0 if kind == "dtmc" else 0.0

    def key(lam: complex) -> float:
        return abs(lam) if kind == "dtmc" else abs(1.0 + lam / rate)

    pos = 0
    while pos < m:
        rest = [(b, _block_eigenvalue(T, *b)) for b in _blocks(T) if b[0] >= pos]
        keys = np.array([key(lam) for _, lam in rest])
        tied = [i for i in range(len(rest)) if keys[i] >= keys.max() - TIE_TOL]
        if ordering == "drop-stationary":
            moving = [i for i in tied if abs(rest[i][1] - stationary_value) > TIE_TOL]
            tied = moving or tied
        (start, size), _ = rest[tied[0]]
        if start != pos:
            T, U, info = dtrexc(T, U, start + 1, pos + 1)
            if info != 0:
                raise ChainError(f"Schur block reordering failed (info={info})")
            T = np.asarray(T)
            U = np.asarray(U)
        pos += size
    return T, U


def _refine_clustered_edge(M: np.ndarray, T: np.ndarray, U: np.ndarray, k: int,
                           cluster_tol: float = 1e-6) -> np.ndarray | None:
    """Recompute the k-th Schur vector when its eigenvalue is (nearly) repeated
    among the discarded ones.

    A defective eigenvalue is only resolved to about the square root of
    machine precision, and so is its Schur vector. The mean of the cluster is
    well conditioned, and with it the missing vector is the null vector of
    ``M^T - mean`` compressed to the complement of the first ``k-1`` vectors.
    Returns the new first ``k`` Schur vectors, or ``None`` if not applicable.
    """
    n = T.shape[0]
    if k >= n or (k >= 2 and T[k - 1, k - 2] != 0.0):
        return None
    diag = np.diag(T)
    sub = np.concatenate([np.diag(T, -1), [0.0]])
    real = (sub == 0.0) & (np.concatenate([[0.0], sub[:-1]]) == 0.0)
    scale = max(1.0, float(np.abs(T).max()))
    lam = diag[k - 1]
    close = real & (np.abs(diag - lam) <= cluster_tol * scale)
    if not close[k:].any() or close[: k - 1].any():
        return None
    mu = float(diag[close].mean())
    W = U[:, : k - 1]
    C = U[:, k - 1:]
    shifted = C.T @ (M.T - mu * np.eye(n)) @ C
    _, _, vh = np.linalg.svd(shifted)
    x = C @ vh[-1]
    x /= np.linalg.norm(x)
    x -= W @ (W.T @ x)
    x /= np.linalg.norm(x)
    return np.column_stack([W, x])


def schur_dynamic_exact(chain: MarkovChain, m: int, ordering: str = "descending-modulus",
                        max_dim: int = 2000) -> SchurReduction:
    """Reduction of dimension ``m`` (or ``m + 1`` to keep a complex pair whole).

    ``ordering`` selects the leading eigenvalues: largest modulus first
    (moduli of the uniformised matrix for CTMCs), optionally pushing the
    stationary eigenvalue behind equally large ones, or LAPACK's own order.
    """
    n = chain.n
    if not 1 <= m < n:
        raise ChainError(f"target dimension must satisfy 1 <= m < n={n}, got {m}")
    if n > max_dim:
        raise ChainError(f"n={n} exceeds the dense Schur cap {max_dim}")
    if ordering not in ORDERINGS:
        raise ChainError(f"unknown ordering {ordering!r}; choose from {', '.join(ORDERINGS)}")
    M = chain.dense()
    try:
        T, U = schur(M.T, output="real")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ChainError(f"Schur decomposition failed: {exc}") from None
    if ordering != "as-computed":
        rate = uniformise(chain.matrix)[1] if not chain.is_dtmc else 1.0
        T, U = _reorder(T, U, m, chain.kind, ordering, rate)
    k = m + 1 if T[m, m - 1] != 0.0 else m
    A = U[:, :k].T.copy()
    dyn = T[:k, :k].T.copy()
    residual = inf_norm(dyn @ A - A @ M)
    sharper = _refine_clustered_edge(M, T, U, k)
    if sharper is not None:
        A2 = sharper.T
        dyn2 = A2 @ M @ A2.T
        residual2 = inf_norm(dyn2 @ A2 - A2 @ M)
        if residual2 <= max(residual, 1e-13):
            A, dyn, residual = A2, dyn2, residual2
    if residual > RESIDUAL_LIMIT:
        raise ChainError(f"Schur reduction residual {residual:.3g} exceeds {RESIDUAL_LIMIT}")
    return SchurReduction(A, dyn, k, residual, chain.kind)


def trivial_stationary_aggregation(chain: MarkovChain) -> SchurReduction:
    """One-dimensional reduction onto the stationary distribution."""
    p = stationary(chain)
    A = p[None, :]
    dyn = np.array([[1.0 if chain.is_dtmc else 0.0]])
    residual = inf_norm(dyn @ A - (chain.matrix.T @ p)[None, :])
    return SchurReduction(A, dyn, 1, residual, chain.kind)
