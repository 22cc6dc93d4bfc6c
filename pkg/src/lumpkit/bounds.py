"""Transient and stationary error bounds for reduced models, plus ground truth."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

from .aggregation import (ReducedModel, lift, reduced_trajectory,
                          reduced_transient_continuous)
from .core import (ChainError, MarkovChain, abs_row_sums, ctmc_transient,
                   default_tol, dtmc_trajectory, inf_norm, is_probability,
                   l1_norm, to_dense)

GEOMETRIC_SUM_CUTOFF = 1e-8


@dataclass(frozen=True)
class ErrorMatrix:
    """``E = Pi A - A P`` (or ``Theta A - A Q``) with its absolute row sums ``tau``."""

    E: sp.csr_matrix
    tau: np.ndarray
    inf_norm: float


def error_matrix(model: ReducedModel, chain: MarkovChain) -> ErrorMatrix:
    if model.n != chain.n:
        raise ChainError(f"model acts on {model.n} states, chain has {chain.n}")
    A = model.A if sp.issparse(model.A) else sp.csr_matrix(np.asarray(model.A, dtype=float))
    E = (sp.csr_matrix(model.dynamics) @ A - A @ chain.matrix).tocsr()
    E.sort_indices()
    tau = abs_row_sums(E)
    return ErrorMatrix(E, tau, float(tau.max(initial=0.0)))


def initial_error(pi0, A, p0) -> float:
    """``||pi0^T A - p0^T||_1``."""
    pi0 = np.asarray(pi0, dtype=float)
    back = A.T @ pi0 if sp.issparse(A) else pi0 @ np.asarray(A, dtype=float)
    return l1_norm(np.asarray(back).ravel() - np.asarray(p0, dtype=float).ravel())


def _start(model: ReducedModel) -> np.ndarray:
    if model.pi0 is None:
        raise ChainError("model has no reduced start vector")
    return model.pi0


@dataclass(frozen=True)
class DtmcBoundReport:
    """Bound curves over steps ``0..k_max``.

    ``precise`` sums the per-step dynamic error terms, ``general`` uses
    ``||Pi||_inf`` only, and ``simple`` (``k ||E||_inf``) is present only when
    its preconditions hold; otherwise ``simple_reason`` says why not.
    """

    initial_error: float
    steps: np.ndarray
    precise: np.ndarray
    general: np.ndarray
    simple: np.ndarray | None
    simple_reason: str | None
    error_inf_norm: float
    pi_inf_norm: float
    pi0_l1: float
    checks: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, np.ndarray):
                out[key] = value.tolist()
        return out


def _geometric(x: float, k: np.ndarray) -> np.ndarray:
    """``sum_{j<k} x^j`` for every entry of ``k``."""
    if abs(x - 1.0) < GEOMETRIC_SUM_CUTOFF:
        powers = x ** np.arange(int(k.max(initial=0)) + 1, dtype=float)
        partial = np.concatenate([[0.0], np.cumsum(powers)])
        return partial[k]
    return (x ** k.astype(float) - 1.0) / (x - 1.0)


def _simple_checks(model: ReducedModel, pi0, tol: float) -> tuple[dict, str | None]:
    checks = {"dynamics_stochastic": model.stochastic_flag(tol),
              "pi0_probability": is_probability(pi0, tol)}
    reason = None
    if not checks["dynamics_stochastic"]:
        reason = ("reduced matrix is not stochastic" if model.kind == "dtmc"
                  else "reduced matrix is not a generator")
    elif not checks["pi0_probability"]:
        reason = "reduced start vector is not a probability vector"
    return checks, reason


def dtmc_bounds(model: ReducedModel, chain: MarkovChain, p0, k_max: int,
                tol: float | None = None) -> DtmcBoundReport:
    if k_max < 0:
        raise ChainError("k_max must be non-negative")
    tol = default_tol() if tol is None else tol
    pi0 = _start(model)
    err = error_matrix(model, chain)
    init = initial_error(pi0, model.A, p0)
    steps = np.arange(k_max + 1)
    traj = reduced_trajectory(model, max(k_max - 1, 0))
    terms = np.abs(traj) @ err.tau
    precise = init + np.concatenate([[0.0], np.cumsum(terms)])[: k_max + 1]
    pi_norm = inf_norm(model.dynamics)
    pi0_l1 = l1_norm(pi0)
    general = init + pi0_l1 * err.inf_norm * _geometric(pi_norm, steps)
    checks, reason = _simple_checks(model, pi0, tol)
    simple = None if reason else init + steps * err.inf_norm
    return DtmcBoundReport(init, steps, precise, general, simple, reason,
                           err.inf_norm, pi_norm, pi0_l1, checks)


@dataclass(frozen=True)
class CtmcBoundReport:
    """Bound curves on a uniform time grid.

    ``precise_estimate`` is a trapezoid estimate of an integral and is not a
    certified bound; ``certified`` records which curves are rigorous.
    """

    initial_error: float
    times: np.ndarray
    step: float
    precise_estimate: np.ndarray
    general: np.ndarray
    simple: np.ndarray | None
    simple_reason: str | None
    error_inf_norm: float
    theta_inf_norm: float
    pi0_l1: float
    certified: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, np.ndarray):
                out[key] = value.tolist()
        return out


def _exp_growth(x: float, t: np.ndarray) -> np.ndarray:
    """``(e^{t x} - 1)/x`` with the limit ``t`` at ``x = 0``."""
    if x == 0.0:
        return t.astype(float)
    return np.expm1(t * x) / x


def ctmc_bounds(model: ReducedModel, chain: MarkovChain, p0, t_max: float,
                quad_steps: int = 1000, tol: float | None = None) -> CtmcBoundReport:
    if t_max < 0 or not np.isfinite(t_max):
        raise ChainError("t_max must be finite and non-negative")
    if quad_steps < 1:
        raise ChainError("quad_steps must be at least 1")
    tol = default_tol() if tol is None else tol
    pi0 = _start(model)
    err = error_matrix(model, chain)
    init = initial_error(pi0, model.A, p0)
    times = np.linspace(0.0, t_max, quad_steps + 1)
    h = t_max / quad_steps
    step = expm(model.dynamics * h)
    pis = np.empty((quad_steps + 1, model.m))
    pis[0] = pi0
    for j in range(1, quad_steps + 1):
        pis[j] = pis[j - 1] @ step
    f = np.abs(pis) @ err.tau
    integral = np.concatenate([[0.0], np.cumsum(0.5 * h * (f[1:] + f[:-1]))])
    theta_norm = inf_norm(model.dynamics)
    pi0_l1 = l1_norm(pi0)
    general = init + pi0_l1 * err.inf_norm * _exp_growth(theta_norm, times)
    checks, reason = _simple_checks(model, pi0, tol)
    simple = None if reason else init + times * err.inf_norm
    certified = {"precise_estimate": False, "general": True, "simple": simple is not None}
    return CtmcBoundReport(init, times, h, init + integral, general, simple, reason,
                           err.inf_norm, theta_norm, pi0_l1, certified, checks)


@dataclass(frozen=True)
class StationaryBoundReport:
    """``measure`` is the stationarity residual of ``pi^T A`` in the full chain."""

    measure: float
    bound: float
    dynamic_term: float
    residual_term: float


def stationary_bound(model: ReducedModel, chain: MarkovChain, pi) -> StationaryBoundReport:
    pi = np.asarray(pi, dtype=float).ravel()
    err = error_matrix(model, chain)
    lifted = lift(model, pi)
    if chain.is_dtmc:
        measure = l1_norm(chain.matrix.T @ lifted - lifted)
        residual = l1_norm(pi @ model.dynamics - pi)
    else:
        measure = l1_norm(chain.matrix.T @ lifted)
        residual = l1_norm(pi @ model.dynamics)
    dynamic = l1_norm(pi) * err.inf_norm
    residual_term = residual * inf_norm(model.A)
    return StationaryBoundReport(measure, dynamic + residual_term, dynamic, residual_term)


@dataclass(frozen=True)
class TightnessInstance:
    """Start vectors on which the one-step (or initial-rate) error meets the bound.

    ``achieved`` is the measured one-step error for DTMCs and ``None`` for
    CTMCs, where ``rate`` is the limit of ``||e_t||_1 / t`` as ``t -> 0``.
    """

    chi: int
    pi0: np.ndarray
    p0: np.ndarray
    rate: float
    achieved: float | None


def tightness_instance(A, dynamics, chain: MarkovChain) -> TightnessInstance:
    Ad = to_dense(A)
    if (Ad < 0).any():
        raise ChainError("A must be entrywise non-negative")
    mass = Ad.sum(axis=1)
    if (mass <= 0).any():
        raise ChainError(f"row {int(np.argmin(mass))} of A has no positive entry")
    model = ReducedModel(sp.csr_matrix(Ad), dynamics, None, chain.kind)
    err = error_matrix(model, chain)
    if err.inf_norm <= 0:
        raise ChainError("error matrix vanishes; no tight instance exists")
    chi = int(np.argmax(err.tau))
    pi0 = np.zeros(model.m)
    pi0[chi] = 1.0 / mass[chi]
    p0 = pi0 @ Ad
    rate = l1_norm(pi0) * err.inf_norm
    achieved = None
    if chain.is_dtmc:
        p1 = chain.matrix.T @ p0
        achieved = l1_norm((pi0 @ model.dynamics) @ Ad - p1)
    return TightnessInstance(chi, pi0, p0, rate, achieved)


def actual_error(chain: MarkovChain, model: ReducedModel, p0, k: int | None = None,
                 t: float | None = None, eps: float = 1e-13) -> float:
    """``||p~ - p||_1`` at step ``k`` (DTMC) or time ``t`` (CTMC)."""
    if chain.is_dtmc:
        if k is None:
            raise ChainError("step count k required for a DTMC")
        return float(actual_error_curve(chain, model, p0, k)[-1])
    if t is None:
        raise ChainError("time t required for a CTMC")
    _, approx = reduced_transient_continuous(model, t)
    exact = ctmc_transient(chain.matrix, p0, t, eps)
    return l1_norm(approx - exact)


def actual_error_curve(chain: MarkovChain, model: ReducedModel, p0, k_max: int) -> np.ndarray:
    """DTMC errors ``||p~_k - p_k||_1`` for ``k = 0..k_max``."""
    exact = dtmc_trajectory(chain.matrix, p0, k_max)
    approx = lift(model, reduced_trajectory(model, k_max))
    return np.abs(approx - exact).sum(axis=1)
