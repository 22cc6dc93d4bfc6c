import numpy as np
import pytest

from conftest import random_ctmc, random_dtmc
from lumpkit.core import ChainError, MarkovChain, inf_norm
from lumpkit.schur import schur_dynamic_exact, trivial_stationary_aggregation


def test_cycle_complex_pair(fx):
    red = schur_dynamic_exact(fx("CHAIN_CYC").chain, 2)
    assert red.achieved_dim == 2 and red.residual <= 1e-10
    ev = np.sort_complex(red.eigenvalues())
    assert np.allclose(ev, [-0.5 - np.sqrt(3) / 2 * 1j, -0.5 + np.sqrt(3) / 2 * 1j], atol=1e-9)


def test_chain_b(fx):
    b = fx("CHAIN_B")
    red = schur_dynamic_exact(b.chain, 2)
    assert red.achieved_dim == 2 and red.residual <= 1e-10
    assert np.allclose(red.A @ red.A.T, np.eye(2), atol=1e-10)


def test_split_pair_grows(fx):
    red = schur_dynamic_exact(fx("CHAIN_CYC").chain, 1, ordering="drop-stationary")
    assert red.achieved_dim == 2


@pytest.mark.parametrize("ordering", ["descending-modulus", "drop-stationary", "as-computed"])
def test_random_orthonormal(ordering):
    g = np.random.default_rng(1)
    for n, m in ((8, 3), (15, 6), (25, 10)):
        chain = MarkovChain.dtmc(random_dtmc(g, n))
        red = schur_dynamic_exact(chain, m, ordering)
        assert red.achieved_dim in (m, m + 1)
        assert np.allclose(red.A @ red.A.T, np.eye(red.achieved_dim), atol=1e-10)
        assert inf_norm(red.dynamics @ red.A - red.A @ chain.dense()) <= 1e-8


def test_ctmc():
    g = np.random.default_rng(3)
    chain = MarkovChain.ctmc(random_ctmc(g, 10))
    red = schur_dynamic_exact(chain, 4)
    assert red.residual <= 1e-8 and red.kind == "ctmc"


def test_bad_dimension(fx):
    with pytest.raises(ChainError):
        schur_dynamic_exact(fx("CHAIN_B").chain, 3)
    with pytest.raises(ChainError):
        schur_dynamic_exact(fx("CHAIN_B").chain, 1, ordering="random")


def test_trivial_stationary(fx):
    red = trivial_stationary_aggregation(fx("CHAIN_A").chain)
    assert np.allclose(red.A, [[1 / 3] * 3], atol=1e-12)
    assert red.residual < 1e-12 and red.dynamics[0, 0] == 1
    assert np.allclose(trivial_stationary_aggregation(fx("CHAIN_CYC").chain).A, 1 / 3)
