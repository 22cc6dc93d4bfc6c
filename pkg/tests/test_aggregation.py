import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_ctmc, random_dtmc, random_partition, random_probability
from lumpkit.aggregation import (Partition, ReducedModel, aggregate_initial, build_model,
                                 build_partitioned, check_alpha, compatibility_check,
                                 induced_dynamics, lift, median_dynamics, optimal_pi0,
                                 proportional_alpha, reduced_transient_continuous,
                                 reduced_transient_discrete, reduced_trajectory, uniform_alpha,
                                 weighted_median)
from lumpkit.benchlab import GenSpec, gen_aggregatable
from lumpkit.core import ChainError, MarkovChain, dtmc_transient
from lumpkit.schur import schur_dynamic_exact


def test_partition_basics():
    p = Partition.from_blocks([[2], [0, 1]])
    assert p.m == 2 and p.n == 3
    assert p == Partition([1, 1, 0], 2)
    assert hash(p) == hash(Partition([0, 0, 1], 2))
    assert Partition.singletons(3).refines(p)
    assert p.refines(Partition.trivial(3))
    assert not Partition.trivial(3).refines(p)
    assert np.array_equal(p.lambda_matrix().toarray(), [[0, 1], [0, 1], [1, 0]])
    with pytest.raises(ChainError):
        Partition([0, 2, 2], 3)  # empty aggregate
    with pytest.raises(ChainError):
        Partition.from_blocks([[0, 1], [1, 2]])


def test_build_partitioned(fx):
    c = fx("CHAIN_C")
    A = build_partitioned(c.partition, c.alpha).toarray()
    assert np.allclose(A, [[1, 0, 0], [0, 0.25, 0.75]])
    assert np.allclose(build_partitioned(Partition.singletons(4), np.ones(4)).toarray(), np.eye(4))
    one = Partition.trivial(3)
    assert np.allclose(build_partitioned(one, uniform_alpha(one)).toarray(), [[1 / 3] * 3])


def test_alpha_checks():
    p = Partition.from_blocks([[0, 1], [2]])
    with pytest.raises(ChainError):
        check_alpha(p, [0.5, 0.4, 1.0])
    with pytest.raises(ChainError):
        check_alpha(p, [1.5, -0.5, 1.0])
    with pytest.raises(ChainError):
        check_alpha(p, [0.5, 0.5])
    assert np.allclose(uniform_alpha(p), [0.5, 0.5, 1])
    assert np.allclose(uniform_alpha(Partition.singletons(3)), 1)
    assert np.allclose(uniform_alpha(Partition.trivial(4)), 0.25)


def test_proportional_alpha(fx):
    c = fx("CHAIN_C")
    a = proportional_alpha(c.chain, c.partition)
    assert abs(a[1] - 29 / 92) < 1e-15 and abs(a[0] - 1) < 1e-15
    g = np.random.default_rng(0)
    D = sum(w * np.eye(6)[g.permutation(6)] for w in g.dirichlet(np.ones(3)))
    part = Partition.from_blocks([[0, 3], [1, 2, 5], [4]])
    assert np.allclose(proportional_alpha(MarkovChain.dtmc(D), part), uniform_alpha(part))
    chain, planted, alpha = gen_aggregatable(GenSpec(60, 6, 0.0, 0.0, 5))
    assert np.allclose(proportional_alpha(chain, planted), alpha, atol=1e-12)


def test_induced_dynamics(fx):
    a, a2 = fx("CHAIN_A"), fx("CHAIN_A2")
    assert np.allclose(induced_dynamics(a.chain, a.partition, a.alpha), np.array([[5, 3], [6, 2]]) / 8)
    assert np.allclose(induced_dynamics(a2.chain, a2.partition, a2.alpha), np.array([[9, 7], [12, 4]]) / 16)
    P = a.chain.dense()
    assert np.allclose(induced_dynamics(a.chain, Partition.singletons(3), np.ones(3)), P)


def test_weighted_median():
    assert weighted_median([1, 2, 3], [0.25, 0.5, 0.25]) == 2
    assert weighted_median([0, 1], [0.5, 0.5]) == 0
    assert weighted_median([5], [1.0]) == 5


def _row_errors(chain, part, alpha, Pi):
    A = build_partitioned(part, alpha).toarray()
    return np.abs(Pi @ A - A @ chain.dense()).sum(axis=1)


def test_median_dynamics_on_exact_fixture(fx):
    c = fx("CHAIN_C")
    assert np.allclose(median_dynamics(c.chain, c.partition, c.alpha),
                       induced_dynamics(c.chain, c.partition, c.alpha), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_median_beats_induced(n, seed):
    g = np.random.default_rng(seed)
    chain = MarkovChain.dtmc(random_dtmc(g, n))
    part = random_partition(g, n)
    alpha = uniform_alpha(part) if seed % 2 else proportional_alpha(chain, part)
    med = _row_errors(chain, part, alpha, median_dynamics(chain, part, alpha))
    ind = _row_errors(chain, part, alpha, induced_dynamics(chain, part, alpha))
    assert np.all(med <= ind + 1e-12)


def test_aggregate_initial(fx):
    b = fx("CHAIN_B")
    assert np.allclose(aggregate_initial(b.p0, b.partition), [19 / 30, 11 / 30])
    p = np.array([0.1, 0.2, 0.7])
    assert np.allclose(aggregate_initial(p, Partition.singletons(3)), p)
    assert np.allclose(aggregate_initial(p, Partition.trivial(3)), [1])


def test_optimal_pi0(fx):
    A = np.array([[0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
    pi0 = optimal_pi0(A, np.array([0.2, 0.2, 0.6]))
    assert np.abs(pi0 @ A - [0.2, 0.2, 0.6]).sum() < 1e-12
    cyc = fx("CHAIN_CYC")
    red = schur_dynamic_exact(cyc.chain, 2)
    pi0 = optimal_pi0(red.A, cyc.p0)
    assert abs(np.abs(pi0 @ red.A - cyc.p0).sum() - 1) < 1e-9
    s = fx("CHAIN_B_SCHUR")
    pi0 = optimal_pi0(s.A, s.p0)
    assert abs(np.abs(pi0 @ s.A - s.p0).sum() - 1 / 18) < 1e-12
    assert np.allclose(pi0 @ s.A, [19 / 30, 0, 19 / 45], atol=1e-12)
    assert np.allclose(pi0, s.pi0, atol=1e-12)


def test_optimal_pi0_probability_constraint():
    A = np.array([[1.0, 0.0, 0.0], [0.0, 0.5, 0.5]])
    pi0 = optimal_pi0(A, np.array([0.6, 0.3, 0.1]), constrain_probability=True)
    assert pi0.min() >= -1e-12 and abs(pi0.sum() - 1) < 1e-12


def test_reduced_transients(fx):
    c = fx("CHAIN_C")
    p0 = np.array([0.5, 0.125, 0.375])  # compatible with alpha
    model = build_model(c.chain, c.partition, c.alpha, p0=p0)
    traj = reduced_trajectory(model, 20)
    for k in range(21):
        assert np.abs(lift(model, traj[k]) - dtmc_transient(c.chain.matrix, p0, k)).sum() < 1e-12
    s = fx("CHAIN_B_SCHUR")
    m = ReducedModel(s.A, s.dynamics, s.pi0)
    _, p1 = reduced_transient_discrete(m, 1)
    assert np.allclose(p1, [19 / 90, 19 / 45, 19 / 45], atol=1e-12)
    _, p_far = reduced_transient_discrete(m, 200)
    assert np.allclose(p_far, [133 / 450, 76 / 225, 19 / 45], atol=1e-12)


def test_reduced_transient_continuous():
    g = np.random.default_rng(2)
    A = np.array([[0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
    m0 = ReducedModel(A, np.zeros((2, 2)), np.array([0.3, 0.7]), "ctmc")
    for t in (0.0, 1.5):
        assert np.allclose(reduced_transient_continuous(m0, t)[1], [0.15, 0.15, 0.7])
    Theta = random_ctmc(g, 2)
    m1 = ReducedModel(A, Theta, np.array([0.3, 0.7]), "ctmc")
    pi_t, _ = reduced_transient_continuous(m1, 2.0)
    assert abs(np.abs(pi_t).sum() - 1) < 1e-10


def test_compatibility(fx):
    c = fx("CHAIN_C")
    ok, res = compatibility_check([0.5, 0.5, 0.0], build_partitioned(c.partition, c.alpha), c.partition)
    assert not ok and abs(res - 0.75) < 1e-15
    A = build_partitioned(c.partition, c.alpha)
    assert compatibility_check([0, 0.25, 0.75], A, c.partition)[0]
    u = Partition.from_blocks([[0, 1], [2]])
    assert compatibility_check(np.full(3, 1 / 3), build_partitioned(u, uniform_alpha(u)), u)[0]


def test_model_modes_and_flags(fx):
    a = fx("CHAIN_A")
    model = build_model(a.chain, a.partition, a.alpha)
    assert model.mode == "partitioned" and model.stochastic_flag()
    s = fx("CHAIN_B_SCHUR")
    assert ReducedModel(s.A, s.dynamics).mode == "abstract"
    with pytest.raises(ChainError):
        ReducedModel(s.A, np.eye(3))


def test_build_model_median_and_ctmc():
    g = np.random.default_rng(7)
    Q = random_ctmc(g, 6)
    part = random_partition(g, 6, 3)
    model = build_model(MarkovChain.ctmc(Q), part, "uniform", p0=random_probability(g, 6))
    assert model.kind == "ctmc" and np.allclose(model.dynamics.sum(axis=1), 0, atol=1e-12)
    P = random_dtmc(g, 6)
    med = build_model(MarkovChain.dtmc(P), part, dynamics="median")
    assert med.dynamics.shape == (3, 3)


def _brute_min(values, weights):
    return min(sum(w * abs(x - v) for v, w in zip(values, weights)) for x in values)


def test_median_matches_brute_force_small():
    g = np.random.default_rng(11)
    for _ in range(20):
        n = int(g.integers(2, 7))
        chain = MarkovChain.dtmc(random_dtmc(g, n))
        part = random_partition(g, n)
        alpha = proportional_alpha(chain, part)
        A = build_partitioned(part, alpha).toarray()
        AP = A @ chain.dense()
        Pi = median_dynamics(chain, part, alpha)
        errs = _row_errors(chain, part, alpha, Pi)
        for rho in range(part.m):
            best = sum(_brute_min(AP[rho, part.omega == s] / alpha[part.omega == s], alpha[part.omega == s])
                       for s in range(part.m))
            assert abs(errs[rho] - best) < 1e-12
