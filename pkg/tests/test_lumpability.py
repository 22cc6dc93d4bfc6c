import numpy as np
import pytest

from conftest import random_dtmc
from lumpkit.aggregation import Partition, ReducedModel, build_model, uniform_alpha
from lumpkit.benchlab import GenSpec, gen_aggregatable, gen_exactly_lumpable
from lumpkit.core import ChainError, MarkovChain
from lumpkit.lumpability import (almost_exact_eps, check_partition_dynamic_exact,
                                 coarsest_exactly_lumpable, incoming_sums, is_aggregatable,
                                 is_deflatable, is_dynamic_exact, is_exactly_lumpable,
                                 is_ordinarily_lumpable, is_strictly_lumpable)
from lumpkit.schur import schur_dynamic_exact


def circulant4():
    P = np.array([[0.1, 0.2, 0.3, 0.4]])
    P = np.vstack([np.roll(P[0], k) for k in range(4)])
    return MarkovChain.dtmc(P), Partition.from_blocks([[0, 2], [1, 3]])


def test_ordinary(fx):
    b, c = fx("CHAIN_B"), fx("CHAIN_C")
    assert is_ordinarily_lumpable(b.chain, b.partition).holds
    rep = is_ordinarily_lumpable(c.chain, c.partition)
    assert not rep.holds and abs(rep.max_violation - 4 / 9) < 1e-15
    assert is_ordinarily_lumpable(c.chain, Partition.singletons(3)).holds


def test_exact(fx):
    c, b = fx("CHAIN_C"), fx("CHAIN_B")
    rep = is_exactly_lumpable(c.chain, c.partition)
    assert not rep.holds
    # incoming mass from aggregate {2,3}: 5/9 into state 2 versus 1 into state 3
    inc = incoming_sums(c.chain, c.partition)
    assert abs(abs(inc[1, 1] - inc[1, 2]) - 4 / 9) < 1e-15
    # largest violation sits in the column of aggregate {1}: 1/4 versus 3/4
    assert abs(rep.max_violation - 1 / 2) < 1e-15
    assert not is_exactly_lumpable(b.chain, b.partition).holds
    D = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
    assert is_exactly_lumpable(MarkovChain.dtmc(D), Partition.trivial(3)).holds


def test_strict(fx):
    b = fx("CHAIN_B")
    assert is_strictly_lumpable(b.chain, Partition.singletons(3)).holds
    assert not is_strictly_lumpable(b.chain, b.partition).holds
    chain, part = circulant4()
    assert is_strictly_lumpable(chain, part).holds


def test_deflatable_and_aggregatable(fx):
    chain, part, alpha = gen_aggregatable(GenSpec(40, 5, 0.3, 0.0, 1))
    assert is_deflatable(chain, part, alpha, 1e-12).holds
    assert is_aggregatable(chain, part, alpha, 1e-12).holds
    c = fx("CHAIN_C")
    assert not is_deflatable(c.chain, c.partition, c.alpha).holds
    assert not is_aggregatable(c.chain, c.partition, c.alpha).holds
    assert is_deflatable(c.chain, Partition.singletons(3), np.ones(3)).holds
    # deflatability forces alpha(2) = 1/2 from state 1 and 1/10 from state 3
    P = c.chain.dense()
    assert abs(P[2, 1] / (P[2, 1] + P[2, 2]) - 1 / 10) < 1e-15
    assert abs(P[1, 1] / (P[1, 1] + P[1, 2]) - 1 / 2) < 1e-15
    with pytest.raises(ChainError):
        is_deflatable(MarkovChain.ctmc(np.array([[-1.0, 1.0], [1.0, -1.0]])),
                      Partition.trivial(2), np.full(2, 0.5))


def test_dynamic_exact(fx):
    c, a, cyc = fx("CHAIN_C"), fx("CHAIN_A"), fx("CHAIN_CYC")
    assert is_dynamic_exact(build_model(c.chain, c.partition, c.alpha), c.chain, 1e-12).holds
    rep = is_dynamic_exact(build_model(a.chain, a.partition, a.alpha), a.chain)
    assert not rep.holds and abs(rep.max_violation - 0.25) < 1e-15
    red = schur_dynamic_exact(cyc.chain, 2)
    assert is_dynamic_exact(ReducedModel(red.A, red.dynamics), cyc.chain).holds


def test_partition_dynamic_exact(fx):
    c = fx("CHAIN_C")
    assert check_partition_dynamic_exact(c.chain, c.partition, c.alpha).holds
    chain, part = gen_exactly_lumpable(30, 5, 0)
    assert check_partition_dynamic_exact(chain, part, uniform_alpha(part)).holds
    alpha = uniform_alpha(part).copy()
    blk = part.blocks()[0]
    alpha[blk] = 0.0
    alpha[blk[0]] = 1.0
    assert not check_partition_dynamic_exact(chain, part, alpha).holds


def test_almost_exact_eps(fx):
    chain, part = gen_exactly_lumpable(30, 5, 1)
    assert almost_exact_eps(chain, part) < 1e-12
    b = fx("CHAIN_B")
    assert abs(almost_exact_eps(b.chain, b.partition) - 3 / 4) < 1e-15
    assert almost_exact_eps(b.chain, Partition.singletons(3)) == 0


def test_coarsest(fx):
    assert coarsest_exactly_lumpable(fx("CHAIN_CYC").chain) == Partition.trivial(3)
    chain, part = gen_exactly_lumpable(60, 6, 2)
    assert coarsest_exactly_lumpable(chain) == part
    g = np.random.default_rng(0)
    P = random_dtmc(g, 12)
    assert coarsest_exactly_lumpable(MarkovChain.dtmc(P)) == Partition.singletons(12)


def test_report_line(fx):
    c = fx("CHAIN_C")
    line = str(is_ordinarily_lumpable(c.chain, c.partition))
    assert line.startswith("ordinary: fails") and "\n" not in line
