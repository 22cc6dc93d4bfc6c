import numpy as np
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import pdist

from conftest import random_dtmc
from lumpkit.aggregation import Partition, build_model
from lumpkit.benchlab import GenSpec, gen_aggregatable, gen_exactly_lumpable
from lumpkit.bounds import error_matrix
from lumpkit.core import MarkovChain
from lumpkit.lumpability import coarsest_exactly_lumpable
from lumpkit.search import (RefineConfig, SvdConfig, cluster, cutoff_rank, err_bound,
                            improved_eps_bound, refine_almost_exact, sign_partition, svd_dir,
                            svd_sgn, vdist)


def test_vdist():
    assert vdist([2, 0], [1, 0]) == 0
    assert vdist([1, 0], [0, 0.5]) == 0.5
    assert abs(vdist([1, 1], [1, 0]) - 1 / np.sqrt(2)) < 1e-15


def _cutoff_oracle(s, eps):
    # smallest l whose leading share reaches 1 - eps, by direct enumeration
    total = sum(s)
    return next(l for l in range(1, len(s) + 1) if sum(s[:l]) >= (1 - eps) * total)


def test_cutoff_rank():
    s = np.array([3.0, 2.0, 1.0, 0.0])
    assert cutoff_rank(s, 0.0) == 3
    assert cutoff_rank(s, 0.5) == 1
    assert cutoff_rank(s, 0.3) == 2
    assert cutoff_rank(s, 1.0) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=12), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_cutoff_rank_oracle_and_monotone(vals, e1, e2):
    s = sorted(vals, reverse=True)
    assert cutoff_rank(np.array(s), e1) == _cutoff_oracle(s, e1)
    lo, hi = sorted((e1, e2))
    assert cutoff_rank(np.array(s), hi) <= cutoff_rank(np.array(s), lo)


def test_svd_dir_planted_60():
    chain, part, _ = gen_aggregatable(GenSpec(60, 6, 0.3, 0.0, 4))
    rep = svd_dir(chain, SvdConfig(0.0, 0.05))
    assert rep.partition == part
    assert err_bound(chain, rep.partition, "proportional") <= 1e-9


def test_svd_dir_eps_one():
    chain, _, _ = gen_aggregatable(GenSpec(60, 6, 0.3, 0.0, 4))
    rep = svd_dir(chain, SvdConfig(1.0, 0.05))
    assert rep.l == 1
    assert rep.partition.m >= 1


def test_svd_sgn():
    chain, part, _ = gen_aggregatable(GenSpec(60, 6, 0.0, 0.0, 8))
    rep = svd_sgn(chain, SvdConfig(fixed_l=6))
    assert rep.partition.refines(part) or rep.partition == part
    assert sign_partition(np.array([[0.3, 0.1, 0.7]])) == Partition.trivial(3)


def test_refine_fixed_points(fx):
    chain, part = gen_exactly_lumpable(80, 8, 3)
    assert refine_almost_exact(chain, RefineConfig(0.0)) == coarsest_exactly_lumpable(chain)
    assert refine_almost_exact(chain, RefineConfig(1e6)) == Partition.trivial(80)
    assert refine_almost_exact(fx("CHAIN_CYC").chain, RefineConfig(0.0)) == Partition.trivial(3)


def test_cluster_semantics():
    pts = np.ones((5, 3))
    assert len(set(cluster(pts, 0.1))) == 1
    two = np.array([[0.0, 0.0], [0.3, 0.0]])
    assert len(set(cluster(two, 0.3, "hierarchical"))) == 1
    assert len(set(cluster(two, 0.3, "greedy"))) == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.floats(0.05, 1.0), st.integers(0, 2**32 - 1))
def test_cluster_diameter(n, eps, seed):
    pts = np.random.default_rng(seed).uniform(size=(n, 3))
    for strategy in ("hierarchical", "greedy"):
        labels = cluster(pts, eps, strategy)
        for lab in set(labels):
            grp = pts[labels == lab]
            if len(grp) > 1:
                assert pdist(grp, "cityblock").max() <= eps + 1e-12


def test_refine_eps_bound_random():
    g = np.random.default_rng(2)
    for eps in (0.05, 0.1, 0.3):
        chain = MarkovChain.dtmc(random_dtmc(g, 30))
        part = refine_almost_exact(chain, RefineConfig(eps))
        assert err_bound(chain, part, "uniform") <= improved_eps_bound(part, eps)


def test_err_bound_single_aggregate():
    g = np.random.default_rng(6)
    chain = MarkovChain.dtmc(random_dtmc(g, 8))
    one = Partition.trivial(8)
    model = build_model(chain, one, "uniform")
    A = model.A.toarray()
    assert abs(err_bound(chain, one) - np.abs(A - A @ chain.dense()).sum()) < 1e-15
    assert abs(err_bound(chain, one) - error_matrix(model, chain).inf_norm) < 1e-15
