import numpy as np
import pytest
from hypothesis import strategies as st

from nonreg_minimax import AffineCombo, Coord, EquivariantMap, Linear, Max, Min


def random_node(rng: np.random.Generator, dim: int, depth: int):
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.6:
            return Coord(int(rng.integers(dim)))
        w = rng.normal(size=dim)
        w[-1] = 1.0 - w[:-1].sum()
        return Linear(tuple(w))
    kind = rng.integers(3)
    k = int(rng.integers(1, 4))
    kids = tuple(random_node(rng, dim, depth - 1) for _ in range(k))
    if kind == 0:
        return Max(kids)
    if kind == 1:
        return Min(kids)
    w = rng.normal(size=k)
    w[-1] = 1.0 - w[:-1].sum()
    return AffineCombo(tuple(zip(w.tolist(), kids)))


def random_map(rng: np.random.Generator, dim: int | None = None, depth: int = 3) -> EquivariantMap:
    dim = int(rng.integers(1, 5)) if dim is None else dim
    return EquivariantMap(random_node(rng, dim, depth), dim)


@st.composite
def maps(draw, max_dim: int = 4, depth: int = 3):
    seed = draw(st.integers(0, 2**32 - 1))
    dim = draw(st.integers(1, max_dim))
    return random_map(np.random.default_rng(seed), dim, depth)


def naive_eval(node, x):
    """Scalar reference evaluator kept independent of the vectorized one."""
    if isinstance(node, Coord):
        return float(x[node.index])
    if isinstance(node, Linear):
        return float(sum(w * xi for w, xi in zip(node.weights, x)))
    if isinstance(node, Max):
        return max(naive_eval(c, x) for c in node.children)
    if isinstance(node, Min):
        return min(naive_eval(c, x) for c in node.children)
    return float(sum(w * naive_eval(c, x) for w, c in node.terms))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
