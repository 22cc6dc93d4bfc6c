"""Lumpability checks and the coarsest exactly lumpable partition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import Partition, ReducedModel, build_partitioned, check_alpha
from .bounds import error_matrix
from .core import ChainError, MarkovChain, default_tol, is_irreducible, to_dense

EXACT_KEY_TOL = 1e-12


@dataclass(frozen=True)
class LumpReport:
    """Verdict of one property check.

    ``witness`` is the worst offending ``(state, reference_state, aggregate)``
    triple, ``None`` when nothing is violated.
    """

    name: str
    holds: bool
    max_violation: float
    witness: tuple | None = None

    def __str__(self):
        verdict = "holds" if self.holds else "fails"
        line = f"{self.name}: {verdict} max_violation={self.max_violation:.17g}"
        if self.witness is not None:
            line += " witness=" + ",".join(str(w) for w in self.witness)
        return line


def _report(name: str, violation: float, witness, tol: float | None) -> LumpReport:
    tol = default_tol() if tol is None else tol
    return LumpReport(name, bool(violation <= tol), float(violation),
                      witness if violation > 0 else None)


def outgoing_sums(chain: MarkovChain, partition: Partition) -> np.ndarray:
    """n x m matrix: mass (or rate) each state sends into each aggregate."""
    return to_dense(chain.matrix @ partition.lambda_matrix())


def incoming_sums(chain: MarkovChain, partition: Partition) -> np.ndarray:
    """m x n matrix: mass each aggregate sends into each state."""
    return to_dense(partition.lambda_matrix().T @ chain.matrix)


def _against_reference(vectors: np.ndarray, partition: Partition) -> tuple[float, tuple | None]:
    """Largest deviation of any state's vector (row) from its aggregate's first state."""
    worst, witness = 0.0, None
    for sigma, members in enumerate(partition.blocks()):
        ref = members[0]
        dev = np.abs(vectors[members] - vectors[ref])
        if dev.size and dev.max() > worst:
            i, j = np.unravel_index(np.argmax(dev), dev.shape)
            worst, witness = float(dev[i, j]), (int(members[i]), int(ref), int(j))
    return worst, witness


def is_ordinarily_lumpable(chain: MarkovChain, partition: Partition, tol: float | None = None) -> LumpReport:
    worst, witness = _against_reference(outgoing_sums(chain, partition), partition)
    return _report("ordinary", worst, witness, tol)


def is_exactly_lumpable(chain: MarkovChain, partition: Partition, tol: float | None = None) -> LumpReport:
    worst, witness = _against_reference(incoming_sums(chain, partition).T, partition)
    return _report("exact", worst, witness, tol)


def is_strictly_lumpable(chain: MarkovChain, partition: Partition, tol: float | None = None) -> LumpReport:
    ordinary = is_ordinarily_lumpable(chain, partition, tol)
    exact = is_exactly_lumpable(chain, partition, tol)
    worse = ordinary if ordinary.max_violation >= exact.max_violation else exact
    return _report("strict", worse.max_violation, worse.witness, tol)


def _require_dtmc(chain: MarkovChain, what: str):
    if not chain.is_dtmc:
        raise ChainError(f"{what} is defined for DTMCs only")


def is_deflatable(chain: MarkovChain, partition: Partition, alpha, tol: float | None = None) -> LumpReport:
    """Largest ``|P(r,s) - alpha(s) * sum_{s' in omega(s)} P(r,s')|``.

    The witness is ``(r, s, aggregate of s)``.
    """
    _require_dtmc(chain, "deflatability")
    alpha = check_alpha(partition, alpha)
    P = chain.dense()
    spread = outgoing_sums(chain, partition)[:, partition.omega] * alpha
    dev = np.abs(P - spread)
    r, s = np.unravel_index(np.argmax(dev), dev.shape)
    return _report("deflatable", float(dev[r, s]), (int(r), int(s), int(partition.omega[s])), tol)


def is_aggregatable(chain: MarkovChain, partition: Partition, alpha, tol: float | None = None) -> LumpReport:
    _require_dtmc(chain, "aggregatability")
    deflat = is_deflatable(chain, partition, alpha, tol)
    ordinary = is_ordinarily_lumpable(chain, partition, tol)
    worse = deflat if deflat.max_violation >= ordinary.max_violation else ordinary
    return _report("aggregatable", worse.max_violation, worse.witness, tol)


def is_dynamic_exact(model: ReducedModel, chain: MarkovChain, tol: float | None = None) -> LumpReport:
    err = error_matrix(model, chain)
    chi = int(np.argmax(err.tau)) if err.tau.size else 0
    return _report("dynamic-exact", err.inf_norm, (chi,), tol)


def check_partition_dynamic_exact(chain: MarkovChain, partition: Partition, alpha,
                                  tol: float | None = None) -> LumpReport:
    """Decide whether the induced reduction of a weighted partition is dynamic-exact.

    Uses the ratio test: every weight is positive, and for each pair of
    aggregates ``(rho, sigma)`` the ratios ``(A P)(rho, s) / alpha(s)`` agree
    over ``s`` in ``sigma``. Witness is ``(s, reference state, rho)``.
    """
    if not is_irreducible(chain):
        raise ChainError("ratio test requires an irreducible chain")
    alpha = check_alpha(partition, alpha)
    if (alpha <= 0).any():
        s = int(np.flatnonzero(alpha <= 0)[0])
        return _report("dynamic-exact", float("inf"), (s, s, int(partition.omega[s])), tol)
    AP = to_dense(build_partitioned(partition, alpha) @ chain.matrix)
    ratios = (AP / alpha).T  # row s holds (A P)(rho, s)/alpha(s) over rho
    worst, witness = _against_reference(ratios, partition)
    return _report("dynamic-exact", worst, witness, tol)


def almost_exact_eps(chain: MarkovChain, partition: Partition, chunk: int = 256) -> float:
    """Smallest eps for which the partition is eps-almost exactly lumpable.

    This is the largest L1 distance between incoming-sum vectors of two
    states sharing an aggregate (a diameter, all pairs compared).
    """
    inc = incoming_sums(chain, partition).T
    worst = 0.0
    for members in partition.blocks():
        X = inc[members]
        for start in range(0, X.shape[0], chunk):
            block = X[start:start + chunk]
            d = np.abs(block[:, None, :] - X[None, :, :]).sum(axis=2)
            worst = max(worst, float(d.max(initial=0.0)))
    return worst


def _split_by_anchor(vectors: np.ndarray, tol: float) -> np.ndarray:
    """Group rows whose max-abs distance to a group's first row is within ``tol``."""
    labels = np.empty(vectors.shape[0], dtype=np.int64)
    anchors: list[np.ndarray] = []
    for i, v in enumerate(vectors):
        for label, a in enumerate(anchors):
            if np.abs(v - a).max(initial=0.0) <= tol:
                labels[i] = label
                break
        else:
            labels[i] = len(anchors)
            anchors.append(v)
    return labels


def coarsest_exactly_lumpable(chain: MarkovChain, tol: float = EXACT_KEY_TOL) -> Partition:
    """Unique coarsest exactly lumpable partition, by splitting from one aggregate.

    States stay together while their incoming-sum vectors coincide (up to
    ``tol`` per entry, absorbing floating-point noise).
    """
    omega = np.zeros(chain.n, dtype=np.int64)
    m = 1
    while True:
        part = Partition(omega, m)
        inc = incoming_sums(chain, part).T
        new = np.empty_like(omega)
        next_label = 0
        for members in part.blocks():
            labels = _split_by_anchor(inc[members], tol)
            new[members] = labels + next_label
            next_label += int(labels.max()) + 1
        if next_label == m:
            return part.canonical()
        omega, m = new, next_label
