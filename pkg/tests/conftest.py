import numpy as np
import pytest
from scipy.linalg import expm

from lumpkit.aggregation import Partition
from lumpkit.benchlab import builtin_fixture


@pytest.fixture
def fx():
    return builtin_fixture


def random_dtmc(g, n, zero_prob=0.0):
    P = g.uniform(size=(n, n)) * (g.uniform(size=(n, n)) >= zero_prob)
    P[np.arange(n), g.integers(n, size=n)] += 0.1  # no empty rows
    return P / P.sum(axis=1, keepdims=True)


def random_ctmc(g, n, scale=1.0):
    Q = g.uniform(0, scale, size=(n, n)) * (g.uniform(size=(n, n)) < 0.6)
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def random_partition(g, n, m=None):
    m = m or int(g.integers(1, n + 1))
    omega = np.concatenate([np.arange(m), g.integers(m, size=n - m)])
    g.shuffle(omega)
    return Partition(omega, m)


def random_probability(g, n):
    p = g.uniform(size=n)
    return p / p.sum()


def expm_oracle(Q, p0, t):
    return p0 @ expm(np.asarray(Q) * t)


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
