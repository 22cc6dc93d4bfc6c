"""Heuristic searches for low-error partitions.

Two spectral methods group states whose truncated right singular vectors
agree (by direction or by sign pattern); the refinement method splits
aggregates until incoming-sum vectors of co-aggregated states are within
``eps`` of each other in L1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.sparse.linalg import svds

from .aggregation import Partition, build_model
from .bounds import error_matrix
from .core import ChainError, MarkovChain
from .lumpability import incoming_sums

SIGN_ZERO = 1e-12
DENSE_SVD_LIMIT = 2000


@dataclass(frozen=True)
class SvdConfig:
    eps: float = 0.0
    delta: float = 0.05
    fixed_l: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ChainError(f"eps must lie in [0, 1], got {self.eps}")
        if self.delta <= 0:
            raise ChainError(f"delta must be positive, got {self.delta}")
        if self.fixed_l is not None and self.fixed_l < 1:
            raise ChainError("fixed_l must be at least 1")


@dataclass(frozen=True)
class SvdReport:
    """``vectors`` is l x n: column ``s`` is the cropped embedding of state ``s``."""

    l: int
    singular_values: np.ndarray
    vectors: np.ndarray
    partition: Partition


@dataclass(frozen=True)
class RefineConfig:
    eps: float = 0.0
    strategy: str = "auto"
    auto_switch_threshold: float = 4e6
    atol: float = 1e-12

    def __post_init__(self):
        if self.eps < 0:
            raise ChainError(f"eps must be non-negative, got {self.eps}")
        if self.strategy not in ("hierarchical", "greedy", "auto"):
            raise ChainError(f"unknown clustering strategy {self.strategy!r}")


def cutoff_rank(singular_values: np.ndarray, eps: float, n: int | None = None) -> int:
    """Smallest ``l >= 1`` whose leading singular values carry a ``1 - eps`` share.

    Values below the usual numerical-rank threshold count as zero, so that
    ``eps = 0`` stops at the numerical rank instead of at rounding noise.
    """
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0:
        raise ChainError("no singular values")
    n = s.size if n is None else n
    floor = s[0] * n * np.finfo(float).eps
    s = np.where(s > floor, s, 0.0)
    cum = np.cumsum(s)
    total = cum[-1]
    l = int(np.searchsorted(cum, (1.0 - eps) * total, side="left")) + 1
    return min(max(l, 1), s.size)


def _canonical_signs(V: np.ndarray) -> np.ndarray:
    """Flip rows so that the largest-magnitude entry of each is positive."""
    idx = np.argmax(np.abs(V), axis=1)
    signs = np.sign(V[np.arange(V.shape[0]), idx])
    signs[signs == 0] = 1.0
    return V * signs[:, None]


def svd_embedding(chain: MarkovChain, cfg: SvdConfig) -> tuple[int, np.ndarray, np.ndarray]:
    """``(l, singular values, l x n embedding)`` with ``P = U diag(s) V``."""
    if not chain.is_dtmc:
        raise ChainError("spectral search is defined for DTMCs only")
    n = chain.n
    if cfg.fixed_l is not None and cfg.fixed_l > n:
        raise ChainError(f"fixed_l={cfg.fixed_l} exceeds the number of states {n}")
    if cfg.fixed_l is not None and n > DENSE_SVD_LIMIT and cfg.fixed_l < n - 1:
        _, s, Vh = svds(chain.matrix, k=cfg.fixed_l, tol=1e-12)
        order = np.argsort(-s, kind="stable")
        return cfg.fixed_l, s[order], _canonical_signs(Vh[order])
    try:
        _, s, Vh = np.linalg.svd(chain.dense())
    except np.linalg.LinAlgError as exc:
        raise ChainError(f"SVD did not converge: {exc}") from None
    l = cfg.fixed_l if cfg.fixed_l is not None else cutoff_rank(s, cfg.eps, n)
    return l, s[:l], _canonical_signs(Vh[:l])


def vdist(v1, v2) -> float:
    """Distance of ``v2`` from the line spanned by ``v1`` (requires ``|v1| >= |v2|``)."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 < n2 * (1 - 1e-12):
        raise ChainError("vdist requires the first vector to be at least as long as the second")
    if n1 == 0:
        return float(n2)
    proj = (v2 @ v1) / (n1 * n1) * v1
    return float(np.linalg.norm(proj - v2))


def _line_distances(cands: np.ndarray, cand_norms: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorised ``vdist(c, v)`` for every column ``c`` of ``cands``."""
    out = np.full(cand_norms.shape[0], np.linalg.norm(v))
    nz = cand_norms > 0
    if nz.any():
        C = cands[:, nz]
        coef = (v @ C) / cand_norms[nz] ** 2
        out[nz] = np.linalg.norm(C * coef - v[:, None], axis=0)
    return out


def direction_partition(vectors: np.ndarray, delta: float) -> Partition:
    """Group columns of ``vectors`` that point in nearly the same direction.

    States are visited by decreasing length. A state joins the aggregate of
    the nearest already-visited state (by distance to its line) when that
    distance is below ``delta``, trying long ("reliable", length above
    ``2 delta``) states before short ones; otherwise it opens a new aggregate.
    """
    n = vectors.shape[1]
    norms = np.linalg.norm(vectors, axis=0)
    order = np.argsort(-norms, kind="stable")
    labels = np.full(n, -1, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    m = 0
    for s in order:
        v = vectors[:, s]
        chosen = -1
        for pool in (visited & (norms > 2 * delta), visited & (norms <= 2 * delta)):
            idx = np.flatnonzero(pool)  # ascending state index: argmin ties pick the smallest
            if idx.size == 0:
                continue
            d = _line_distances(vectors[:, idx], norms[idx], v)
            best = int(np.argmin(d))
            if d[best] < delta:
                chosen = int(idx[best])
                break
        if chosen >= 0:
            labels[s] = labels[chosen]
        else:
            labels[s] = m
            m += 1
        visited[s] = True
    return Partition(labels, m).canonical()


def svd_dir(chain: MarkovChain, cfg: SvdConfig = SvdConfig()) -> SvdReport:
    l, s, V = svd_embedding(chain, cfg)
    return SvdReport(l, s, V, direction_partition(V, cfg.delta))


def sign_partition(vectors: np.ndarray, zero: float = SIGN_ZERO) -> Partition:
    """Group columns of ``vectors`` by their sign pattern."""
    signs = np.where(np.abs(vectors) < zero, 0, np.sign(vectors)).astype(np.int8)
    _, first, inverse = np.unique(signs.T, axis=0, return_index=True, return_inverse=True)
    return Partition(inverse.ravel(), first.size).canonical()


def svd_sgn(chain: MarkovChain, cfg: SvdConfig = SvdConfig()) -> SvdReport:
    l, s, V = svd_embedding(chain, cfg)
    return SvdReport(l, s, V, sign_partition(V))


def cluster(points, eps: float, strategy: str = "hierarchical") -> np.ndarray:
    """Cluster rows of ``points`` so every cluster has L1 diameter at most ``eps``.

    ``hierarchical`` is complete-linkage agglomeration cut at ``eps``;
    ``greedy`` is one pass attaching each point to the first anchor within
    ``eps/2``. Labels are numbered by first appearance.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    k = X.shape[0]
    if eps < 0:
        raise ChainError("eps must be non-negative")
    if k <= 1:
        return np.zeros(k, dtype=np.int64)
    if strategy == "hierarchical":
        Z = linkage(X, method="complete", metric="cityblock")
        raw = fcluster(Z, t=eps, criterion="distance")
    elif strategy == "greedy":
        raw = np.empty(k, dtype=np.int64)
        anchors = np.empty((0, X.shape[1]))
        for i, x in enumerate(X):
            near = np.flatnonzero(np.abs(anchors - x).sum(axis=1) <= eps / 2)
            if near.size:
                raw[i] = near[0]
            else:
                raw[i] = anchors.shape[0]
                anchors = np.vstack([anchors, x])
    else:
        raise ChainError(f"unknown clustering strategy {strategy!r}")
    _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(first.size)
    return rank[inverse.ravel()]


def refine_almost_exact(chain: MarkovChain, cfg: RefineConfig = RefineConfig()) -> Partition:
    """Coarse partition whose aggregates have incoming-sum diameter at most ``eps``.

    Starts from a single aggregate and re-clusters each aggregate by its
    states' incoming-sum vectors until no aggregate splits. The clustering
    threshold is ``max(eps, atol)`` so that ``eps = 0`` tolerates rounding.
    """
    threshold = max(cfg.eps, cfg.atol)
    omega = np.zeros(chain.n, dtype=np.int64)
    m = 1
    while True:
        part = Partition(omega, m)
        inc = incoming_sums(chain, part).T
        new = np.empty_like(omega)
        next_label = 0
        for members in part.blocks():
            d = members.size
            strategy = cfg.strategy
            if strategy == "auto":
                strategy = "greedy" if d * d * m > cfg.auto_switch_threshold else "hierarchical"
            labels = cluster(inc[members], threshold, strategy)
            new[members] = labels + next_label
            next_label += int(labels.max()) + 1
        if next_label == m:
            return part.canonical()
        omega, m = new, next_label


def err_bound(chain: MarkovChain, partition: Partition, alpha="uniform") -> float:
    """``||Pi A - A P||_inf`` of the induced reduction under the given weights."""
    model = build_model(chain, partition, alpha)
    return error_matrix(model, chain).inf_norm


def improved_eps_bound(partition: Partition, eps: float) -> float:
    """Bound ``m (max|rho| - 1)/min|rho| eps`` on the uniform-weight induced error."""
    sizes = partition.sizes()
    return float(partition.m * (sizes.max() - 1) / sizes.min() * eps)
