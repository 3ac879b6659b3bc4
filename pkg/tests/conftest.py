"""Shared fixtures: catalog landscapes are expensive enough to build once."""

import numpy as np
import pytest

from gamma_ladder.chains import build_chain
from gamma_ladder.hierarchy import ReducedChain, build_ladder
from gamma_ladder.landscape import Landscape


@pytest.fixture(scope="session")
def double_well():
    return Landscape("sin(2*pi*x1)^2 + 0.2*(1 - cos(2*pi*x1))")


@pytest.fixture(scope="session")
def symmetric_double_well():
    return Landscape("sin(2*pi*x1)^2")


@pytest.fixture(scope="session")
def single_well():
    return Landscape("-cos(2*pi*x1)")


@pytest.fixture(scope="session")
def three_well():
    return Landscape("0.5*(1 - cos(6*pi*x1)) + 0.15*(1 + cos(6*pi*x1))*cos(2*pi*x1)")


@pytest.fixture(scope="session")
def two_dim_well():
    return Landscape("sin(2*pi*x1)^2 + sin(2*pi*x2)^2")


def random_reversible_chain(rng: np.random.Generator, k: int, extra_edge_prob: float = 0.4):
    """Random conductance network on a random connected symmetric support.

    Rates R(i,j) = c(i,j)/pi(i) satisfy detailed balance for pi by
    construction; build_chain independently certifies that.
    """
    pi = rng.uniform(0.2, 2.0, size=k)
    edges = [(i, i + 1) for i in range(k - 1)]
    for i in range(k):
        for j in range(i + 2, k):
            if rng.random() < extra_edge_prob:
                edges.append((i, j))
    rates = {}
    for i, j in edges:
        c = rng.uniform(0.1, 3.0)
        rates[(i, j)] = c / pi[i]
        rates[(j, i)] = c / pi[j]
    return build_chain(list(range(k)), rates)


def block_diag_chain(rng: np.random.Generator):
    """Three reversible 2-state blocks plus a transient state draining into them.

    States 1..6 pair into blocks {1,2}, {3,4}, {5,6}; state 7 feeds every
    block, so its class is open.
    """
    r = np.zeros((7, 7))
    for a in (0, 2, 4):
        r[a, a + 1] = rng.uniform(0.5, 3.0)
        r[a + 1, a] = rng.uniform(0.5, 3.0)
    for b in (0, 2, 4):
        r[6, b] = rng.uniform(0.1, 1.0)
    return ReducedChain([1, 2, 3, 4, 5, 6, 7], r)


def synthetic_ladder(rng: np.random.Generator, depths=None):
    level1 = block_diag_chain(rng)
    # three valley labels; C is transient, A and B form one closed class
    r2 = np.zeros((3, 3))
    r2[0, 1] = rng.uniform(0.5, 2.0)
    r2[1, 0] = rng.uniform(0.5, 2.0)
    r2[2, 0] = rng.uniform(0.1, 1.0)
    level2 = ReducedChain(["A", "B", "C"], r2)
    level3 = ReducedChain(["top"], np.zeros((1, 1)))
    return build_ladder([1, 2, 3, 4, 5, 6, 7], [level1, level2, level3], depths=depths)
