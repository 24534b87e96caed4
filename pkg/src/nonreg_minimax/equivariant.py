"""Translation-scale equivariant maps g: R^d -> R as expression trees.

A map satisfies ``g(x + c) = g(x) + c`` for every scalar shift ``c`` applied to
all coordinates and ``g(u x) = u g(x)`` for ``u >= 0``.  Trees built from
coordinate selectors, weight-normalized linear forms, max, min and
weight-normalized affine combinations all have both properties, and every such
tree is piecewise linear, so one-sided directional derivatives can be computed
exactly by structural recursion.

All evaluation routines are vectorized over leading axes: an input of shape
``(..., d)`` produces an output of shape ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ._validation import InputError, as_finite_vector

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class Coord:
    index: int


@dataclass(frozen=True)
class Linear:
    weights: tuple[float, ...]


@dataclass(frozen=True)
class Max:
    children: tuple["Node", ...]


@dataclass(frozen=True)
class Min:
    children: tuple["Node", ...]


@dataclass(frozen=True)
class AffineCombo:
    terms: tuple[tuple[float, "Node"], ...]


Node = Union[Coord, Linear, Max, Min, AffineCombo]


def _validate(node, dim: int) -> None:
    if isinstance(node, Coord):
        if not (0 <= node.index < dim):
            raise InputError(f"coord index {node.index} out of range for dim {dim}")
    elif isinstance(node, Linear):
        if len(node.weights) != dim:
            raise InputError(f"linear node has {len(node.weights)} weights, expected {dim}")
        w = np.asarray(node.weights, dtype=float)
        if not np.all(np.isfinite(w)):
            raise InputError("linear weights must be finite")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise InputError(f"linear weights must sum to 1, got {w.sum()!r}")
    elif isinstance(node, (Max, Min)):
        if len(node.children) == 0:
            raise InputError(f"{type(node).__name__.lower()} node needs at least one child")
        for ch in node.children:
            _validate(ch, dim)
    elif isinstance(node, AffineCombo):
        if len(node.terms) == 0:
            raise InputError("combo node needs at least one term")
        w = np.array([t[0] for t in node.terms], dtype=float)
        if not np.all(np.isfinite(w)):
            raise InputError("combo weights must be finite")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise InputError(f"combo weights must sum to 1, got {w.sum()!r}")
        for _, ch in node.terms:
            _validate(ch, dim)
    else:
        raise InputError(f"unknown node type {type(node).__name__}")


def _eval(node, x: np.ndarray) -> np.ndarray:
    if isinstance(node, Coord):
        return x[..., node.index]
    if isinstance(node, Linear):
        return x @ np.asarray(node.weights)
    if isinstance(node, Max):
        out = _eval(node.children[0], x)
        for ch in node.children[1:]:
            out = np.maximum(out, _eval(ch, x))
        return out
    if isinstance(node, Min):
        out = _eval(node.children[0], x)
        for ch in node.children[1:]:
            out = np.minimum(out, _eval(ch, x))
        return out
    out = None
    for w, ch in node.terms:
        term = w * _eval(ch, x)
        out = term if out is None else out + term
    return out


def _lipschitz(node) -> float:
    if isinstance(node, Coord):
        return 1.0
    if isinstance(node, Linear):
        return float(np.sum(np.abs(node.weights)))
    if isinstance(node, (Max, Min)):
        return max(_lipschitz(ch) for ch in node.children)
    return float(sum(abs(w) * _lipschitz(ch) for w, ch in node.terms))


def _default_tol(value: float) -> float:
    return 1e-12 * max(1.0, abs(value))


def _active(node, x: np.ndarray, tie_tol: float | None):
    """Values of children at ``x`` and the indices of the argmax/argmin set."""
    vals = np.array([float(_eval(ch, x)) for ch in node.children])
    best = vals.max() if isinstance(node, Max) else vals.min()
    tol = _default_tol(best) if tie_tol is None else tie_tol
    if isinstance(node, Max):
        idx = np.flatnonzero(vals >= best - tol)
    else:
        idx = np.flatnonzero(vals <= best + tol)
    return vals, best, idx


def _dir_deriv(node, x: np.ndarray, z: np.ndarray, tie_tol: float | None) -> np.ndarray:
    if isinstance(node, (Coord, Linear)):
        return _eval(node, z)
    if isinstance(node, (Max, Min)):
        _, _, idx = _active(node, x, tie_tol)
        parts = [_dir_deriv(node.children[k], x, z, tie_tol) for k in idx]
        red = np.maximum if isinstance(node, Max) else np.minimum
        out = parts[0]
        for p in parts[1:]:
            out = red(out, p)
        return out
    out = None
    for w, ch in node.terms:
        term = w * _dir_deriv(ch, x, z, tie_tol)
        out = term if out is None else out + term
    return out


def _exact_step(node, x: np.ndarray, zinf: float, tie_tol: float | None) -> float:
    if isinstance(node, (Coord, Linear)):
        return np.inf
    if isinstance(node, AffineCombo):
        return min(_exact_step(ch, x, zinf, tie_tol) for _, ch in node.terms)
    vals, best, idx = _active(node, x, tie_tol)
    step = min(_exact_step(node.children[k], x, zinf, tie_tol) for k in idx)
    rest = np.setdiff1d(np.arange(len(vals)), idx)
    if rest.size:
        gap = float(np.min(np.abs(vals[rest] - best)))
        step = min(step, gap / (2.0 * _lipschitz(node) * zinf))
    return step


def _to_dict(node) -> dict:
    if isinstance(node, Coord):
        return {"kind": "coord", "index": node.index}
    if isinstance(node, Linear):
        return {"kind": "linear", "weights": list(node.weights)}
    if isinstance(node, Max):
        return {"kind": "max", "children": [_to_dict(c) for c in node.children]}
    if isinstance(node, Min):
        return {"kind": "min", "children": [_to_dict(c) for c in node.children]}
    return {"kind": "combo", "terms": [{"w": w, "node": _to_dict(c)} for w, c in node.terms]}


def node_from_dict(obj) -> Node:
    """Parse the JSON tree format, e.g. ``{"kind": "max", "children": [...]}``."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise InputError(f"tree node must be an object with a 'kind' key, got {obj!r}")
    kind = obj["kind"]
    try:
        if kind == "coord":
            return Coord(int(obj["index"]))
        if kind == "linear":
            return Linear(tuple(float(w) for w in obj["weights"]))
        if kind == "max":
            return Max(tuple(node_from_dict(c) for c in obj["children"]))
        if kind == "min":
            return Min(tuple(node_from_dict(c) for c in obj["children"]))
        if kind == "combo":
            return AffineCombo(tuple((float(t["w"]), node_from_dict(t["node"])) for t in obj["terms"]))
    except KeyError as exc:
        raise InputError(f"tree node of kind {kind!r} is missing key {exc}") from None
    raise InputError(f"unknown tree node kind {kind!r}")


def _infer_dim(node) -> int:
    if isinstance(node, Coord):
        return node.index + 1
    if isinstance(node, Linear):
        return len(node.weights)
    if isinstance(node, (Max, Min)):
        return max(_infer_dim(c) for c in node.children)
    return max(_infer_dim(c) for _, c in node.terms)


class EquivariantMap:
    """An immutable, validated expression tree over ``dim`` coordinates."""

    __slots__ = ("_root", "_dim", "_lip")

    def __init__(self, root: Node, dim: int):
        if int(dim) < 1:
            raise InputError("dim must be >= 1")
        _validate(root, int(dim))
        self._root = root
        self._dim = int(dim)
        self._lip = _lipschitz(root)

    @property
    def root(self) -> Node:
        return self._root

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant with respect to the sup-norm."""
        return self._lip

    # constructors for the common cases
    @classmethod
    def max_of(cls, dim: int) -> "EquivariantMap":
        return cls(Max(tuple(Coord(i) for i in range(dim))), dim)

    @classmethod
    def min_of(cls, dim: int) -> "EquivariantMap":
        return cls(Min(tuple(Coord(i) for i in range(dim))), dim)

    @classmethod
    def linear(cls, weights) -> "EquivariantMap":
        w = tuple(float(v) for v in weights)
        return cls(Linear(w), len(w))

    @classmethod
    def identity(cls) -> "EquivariantMap":
        return cls(Coord(0), 1)

    @classmethod
    def from_dict(cls, obj, dim: int | None = None) -> "EquivariantMap":
        if isinstance(obj, dict) and "root" in obj:
            dim = obj.get("dim", dim)
            obj = obj["root"]
        root = node_from_dict(obj)
        return cls(root, _infer_dim(root) if dim is None else int(dim))

    def to_dict(self) -> dict:
        return {"dim": self._dim, "root": _to_dict(self._root)}

    def __call__(self, x) -> np.ndarray | float:
        return self.evaluate(x)

    def evaluate(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self._dim,):
            raise InputError(f"last axis must have length {self._dim}, got shape {x.shape}")
        out = _eval(self._root, x)
        return float(out) if x.ndim == 1 else out

    def __repr__(self) -> str:
        return f"EquivariantMap(dim={self._dim}, root={self._root!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, EquivariantMap) and self._dim == other._dim and self._root == other._root

    def __hash__(self) -> int:
        return hash((self._dim, self._root))


def evaluate(g: EquivariantMap, x) -> float:
    """g(x) for a single finite point."""
    x = as_finite_vector(x, "x", g.dim)
    return g.evaluate(x)


def dir_deriv(g: EquivariantMap, x, z, tie_tol: float | None = None):
    """One-sided directional derivative ``lim_{t->0+} (g(x + t z) - g(x)) / t``.

    ``z`` may carry leading batch axes.  Children of a max (min) node within
    ``tie_tol`` of the maximum (minimum) are treated as tied; the default
    tolerance is ``1e-12 * max(1, |value|)`` at each node.
    """
    x = as_finite_vector(x, "x", g.dim)
    z = np.asarray(z, dtype=float)
    if z.shape[-1:] != (g.dim,):
        raise InputError(f"z must have last axis of length {g.dim}, got shape {z.shape}")
    if tie_tol is not None and tie_tol < 0:
        raise InputError("tie_tol must be nonnegative")
    out = _dir_deriv(g.root, x, z, tie_tol)
    return float(out) if z.ndim == 1 else out


def exact_step(g: EquivariantMap, x, z, tie_tol: float | None = None) -> float:
    """A step ``t*`` such that ``g(x + t z) = g(x) + t dir_deriv(x, z)`` for ``0 <= t < t*``.

    The bound follows the active branches of the tree: at each max/min node the
    gap between the extreme value and the nearest non-extreme child shrinks at
    rate at most ``2 * lipschitz * |z|_inf``.
    """
    x = as_finite_vector(x, "x", g.dim)
    z = as_finite_vector(z, "z", g.dim)
    zinf = float(np.max(np.abs(z)))
    if zinf == 0.0:
        return np.inf
    return _exact_step(g.root, x, zinf, tie_tol)


class DirectionalDerivative:
    """The map ``z -> dir_deriv(g, x0, z)`` with the active sets resolved once."""

    def __init__(self, g: EquivariantMap, x0, tie_tol: float | None = None):
        self.g = g
        self.x0 = as_finite_vector(x0, "x0", g.dim)
        self.tie_tol = tie_tol
        self._root = _resolve(g.root, self.x0, tie_tol)

    @property
    def dim(self) -> int:
        return self.g.dim

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = _eval(self._root, z)
        return float(out) if z.ndim == 1 else out


def _resolve(node, x, tie_tol):
    """Prune a tree to the branches active at ``x``; the result is still equivariant."""
    if isinstance(node, (Coord, Linear)):
        return node
    if isinstance(node, AffineCombo):
        return AffineCombo(tuple((w, _resolve(ch, x, tie_tol)) for w, ch in node.terms))
    _, _, idx = _active(node, x, tie_tol)
    kids = tuple(_resolve(node.children[k], x, tie_tol) for k in idx)
    return type(node)(kids)


@dataclass(frozen=True)
class GHatEstimator:
    """Consistent estimator of the directional derivative map at the true parameter.

    ``value(z) = g(z + (beta_tilde - g(beta_tilde)) / eps)``, which by
    equivariance equals ``(g(beta_tilde + eps z) - g(beta_tilde)) / eps``.
    """

    map: EquivariantMap
    beta_tilde: np.ndarray
    eps: float

    def __post_init__(self):
        object.__setattr__(self, "beta_tilde", as_finite_vector(self.beta_tilde, "beta_tilde", self.map.dim))
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise InputError(f"eps must be positive, got {self.eps!r}")

    @property
    def dim(self) -> int:
        return self.map.dim

    @property
    def shift(self) -> np.ndarray:
        return (self.beta_tilde - self.map.evaluate(self.beta_tilde)) / self.eps

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape[-1:] != (self.dim,):
            raise InputError(f"z must have last axis of length {self.dim}, got shape {z.shape}")
        return self.map.evaluate(z + self.shift)


def g_hat(est: GHatEstimator, z):
    return est(z)
