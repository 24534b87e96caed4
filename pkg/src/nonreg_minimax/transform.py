"""Outer transforms f (Lipschitz, piecewise C^1 with finitely many kinks) and losses."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._validation import InputError

_CLAMP = 1e300
_KINK_TOL = 1e-12


@dataclass(frozen=True)
class LinearPiece:
    slope: float
    intercept: float

    deriv_lip = 0.0

    def value(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept

    def derivative(self, x):
        return np.full(np.shape(x), float(self.slope))


@dataclass(frozen=True)
class SmoothPiece:
    """A C^1 piece given by callables; ``deriv_lip`` bounds the derivative's Lipschitz constant."""

    value_fn: Callable
    deriv_fn: Callable
    deriv_lip: float

    def value(self, x):
        return np.asarray(self.value_fn(np.asarray(x, dtype=float)), dtype=float)

    def derivative(self, x):
        return np.asarray(self.deriv_fn(np.asarray(x, dtype=float)), dtype=float) * np.ones(np.shape(x))


def _clamp_input(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > _CLAMP):
        warnings.warn("transform input beyond +-1e300 clamped", RuntimeWarning, stacklevel=3)
        x = np.clip(x, -_CLAMP, _CLAMP)
    return x


class Transform:
    """Continuous piecewise-C^1 map on the real line.

    ``pieces[j]`` governs the open interval between ``kinks[j-1]`` and
    ``kinks[j]`` (unbounded at the ends).  Each piece's callables must extend
    continuously to the closure of its interval so that one-sided limits at
    kinks are available.
    """

    def __init__(self, kinks: Sequence[float], pieces: Sequence, lipschitz: float | None = None,
                 name: str = "custom", descriptor: dict | None = None):
        kinks = np.asarray(kinks, dtype=float).reshape(-1)
        if len(pieces) != kinks.size + 1:
            raise InputError(f"need {kinks.size + 1} pieces for {kinks.size} kinks, got {len(pieces)}")
        if not np.all(np.isfinite(kinks)):
            raise InputError("kinks must be finite")
        if np.any(np.diff(kinks) <= 0):
            raise InputError("kinks must be strictly increasing")
        self.kinks = kinks
        self.pieces = tuple(pieces)
        self.name = name
        self.descriptor = descriptor
        self._check_continuity()
        self._check_derivative_lipschitz()
        self.lipschitz = self._lipschitz() if lipschitz is None else float(lipschitz)
        if not self._nonconstant():
            raise InputError("transform must be non-constant")

    # validation -----------------------------------------------------------
    def _check_continuity(self):
        for j, k in enumerate(self.kinks):
            left = float(self.pieces[j].value(k))
            right = float(self.pieces[j + 1].value(k))
            if abs(left - right) > _KINK_TOL * max(1.0, abs(left)):
                raise InputError(f"transform is discontinuous at kink {k}: {left} vs {right}")

    def _piece_sample(self, j: int, num: int = 64) -> np.ndarray:
        first = self.kinks[0] if self.kinks.size else 0.0
        last = self.kinks[-1] if self.kinks.size else 0.0
        lo = self.kinks[j - 1] if j > 0 else first - 10.0
        hi = self.kinks[j] if j < self.kinks.size else last + 10.0
        return np.linspace(lo, hi, num)

    def _check_derivative_lipschitz(self):
        for j, piece in enumerate(self.pieces):
            if isinstance(piece, LinearPiece):
                continue
            xs = self._piece_sample(j)
            d = piece.derivative(xs)
            slopes = np.abs(np.diff(d)) / np.diff(xs)
            if np.max(slopes) > piece.deriv_lip * (1 + 1e-6) + 1e-9:
                raise InputError(f"piece {j} derivative varies faster than its declared bound {piece.deriv_lip}")

    def _lipschitz(self) -> float:
        best = 0.0
        for j, piece in enumerate(self.pieces):
            if isinstance(piece, LinearPiece):
                best = max(best, abs(piece.slope))
            else:
                best = max(best, float(np.max(np.abs(piece.derivative(self._piece_sample(j, 512))))))
        return best

    def _nonconstant(self) -> bool:
        return any(np.any(np.abs(p.derivative(self._piece_sample(j))) > 0) for j, p in enumerate(self.pieces))

    # evaluation -----------------------------------------------------------
    def _piece_index(self, x):
        return np.searchsorted(self.kinks, x, side="right")

    def __call__(self, x):
        return f_eval(self, x)

    def one_sided(self, k_index: int) -> tuple[float, float]:
        """Left and right derivative at kink ``k_index``."""
        k = self.kinks[k_index]
        return float(self.pieces[k_index].derivative(k)), float(self.pieces[k_index + 1].derivative(k))

    def to_dict(self) -> dict:
        if self.descriptor is None:
            raise InputError("this transform was built from callables and has no JSON descriptor")
        return dict(self.descriptor)

    def __repr__(self) -> str:
        return f"Transform({self.name}, kinks={self.kinks.tolist()})"

    # built-in constructors ----------------------------------------------
    @classmethod
    def identity(cls) -> "Transform":
        return cls([], [LinearPiece(1.0, 0.0)], name="identity", descriptor={"kind": "identity"})

    @classmethod
    def absolute(cls) -> "Transform":
        return cls([0.0], [LinearPiece(-1.0, 0.0), LinearPiece(1.0, 0.0)], name="abs", descriptor={"kind": "abs"})

    @classmethod
    def relu(cls) -> "Transform":
        return cls([0.0], [LinearPiece(0.0, 0.0), LinearPiece(1.0, 0.0)], name="relu", descriptor={"kind": "relu"})

    @classmethod
    def hinge(cls, slope: float, intercept: float) -> "Transform":
        """``max(slope * x + intercept, 0)``."""
        if slope == 0:
            raise InputError("hinge slope must be nonzero")
        k = -intercept / slope
        flat, ramp = LinearPiece(0.0, 0.0), LinearPiece(slope, intercept)
        pieces = [flat, ramp] if slope > 0 else [ramp, flat]
        return cls([k], pieces, name="hinge",
                   descriptor={"kind": "hinge", "slope": slope, "intercept": intercept})

    @classmethod
    def clamp(cls, lo: float = 0.0, hi: float = 1.0) -> "Transform":
        """``min(max(x, lo), hi)``."""
        if not lo < hi:
            raise InputError("clamp needs lo < hi")
        return cls([lo, hi], [LinearPiece(0.0, lo), LinearPiece(1.0, 0.0), LinearPiece(0.0, hi)],
                   name="clamp", descriptor={"kind": "clamp", "lo": lo, "hi": hi})

    @classmethod
    def piecewise_linear(cls, xs, ys, left_slope: float | None = None,
                         right_slope: float | None = None) -> "Transform":
        """Interpolate the knots ``(xs, ys)``; outside them extend with the given slopes.

        Missing end slopes continue the first/last segment.
        """
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
            raise InputError("piecewise_linear needs matching xs, ys with at least two knots")
        slopes = np.diff(ys) / np.diff(xs)
        ls = slopes[0] if left_slope is None else float(left_slope)
        rs = slopes[-1] if right_slope is None else float(right_slope)
        pieces = [LinearPiece(ls, ys[0] - ls * xs[0])]
        pieces += [LinearPiece(s, y - s * x) for s, x, y in zip(slopes, xs[:-1], ys[:-1])]
        pieces.append(LinearPiece(rs, ys[-1] - rs * xs[-1]))
        desc = {"kind": "piecewise_linear", "x": xs.tolist(), "y": ys.tolist(),
                "left_slope": float(ls), "right_slope": float(rs)}
        return cls(xs, pieces, name="piecewise_linear", descriptor=desc)

    @classmethod
    def from_dict(cls, obj: dict) -> "Transform":
        if not isinstance(obj, dict) or "kind" not in obj:
            raise InputError(f"transform descriptor must be an object with 'kind', got {obj!r}")
        kind = obj["kind"]
        try:
            if kind == "identity":
                return cls.identity()
            if kind == "abs":
                return cls.absolute()
            if kind == "relu":
                return cls.relu()
            if kind == "hinge":
                return cls.hinge(float(obj["slope"]), float(obj["intercept"]))
            if kind == "clamp":
                return cls.clamp(float(obj.get("lo", 0.0)), float(obj.get("hi", 1.0)))
            if kind == "piecewise_linear":
                return cls.piecewise_linear(obj["x"], obj["y"], obj.get("left_slope"), obj.get("right_slope"))
        except KeyError as exc:
            raise InputError(f"transform of kind {kind!r} is missing key {exc}") from None
        raise InputError(f"unknown transform kind {kind!r}")


def f_eval(f: Transform, x):
    x = _clamp_input(x)
    idx = f._piece_index(x)
    if x.ndim == 0:
        return float(f.pieces[int(idx)].value(x))
    out = np.empty_like(x)
    for j, piece in enumerate(f.pieces):
        mask = idx == j
        if np.any(mask):
            out[mask] = piece.value(x[mask])
    return out


def _kink_at(f: Transform, x: float) -> int | None:
    if f.kinks.size == 0:
        return None
    j = int(np.argmin(np.abs(f.kinks - x)))
    if abs(f.kinks[j] - x) <= _KINK_TOL * max(1.0, abs(f.kinks[j])):
        return j
    return None


def f_bar_prime(f: Transform, x: float) -> float:
    """Limit of the local supremum of ``|f'|`` around ``x``."""
    x = float(_clamp_input(x))
    j = _kink_at(f, x)
    if j is not None:
        left, right = f.one_sided(j)
        return max(abs(left), abs(right))
    return abs(float(f.pieces[int(f._piece_index(x))].derivative(x)))


@dataclass(frozen=True)
class AHat:
    value: float
    slack: float


def a_hat(f: Transform, g_val: float, eps: float, return_slack: bool = False):
    """Supremum of ``|f'|`` over ``[g_val - eps, g_val + eps]`` restricted to differentiability points.

    Each piece overlapping the interval is scanned on a grid of spacing at most
    ``eps / 32`` including the overlap's endpoints (one-sided limits at kinks).
    Linear pieces are exact; for curved pieces the true supremum may exceed the
    reported value by at most ``slack = deriv_lip * spacing / 2``.
    """
    if not (np.isfinite(eps) and eps > 0):
        raise InputError(f"eps must be positive, got {eps!r}")
    g_val = float(_clamp_input(g_val))
    lo, hi = g_val - eps, g_val + eps
    bounds = np.concatenate([[-np.inf], f.kinks, [np.inf]])
    best, slack = 0.0, 0.0
    for j, piece in enumerate(f.pieces):
        a, b = max(lo, bounds[j]), min(hi, bounds[j + 1])
        if not a < b:
            continue
        if isinstance(piece, LinearPiece):
            best = max(best, abs(piece.slope))
            continue
        num = int(math.ceil((b - a) / (eps / 32.0))) + 1
        xs = np.linspace(a, b, num)
        best = max(best, float(np.max(np.abs(piece.derivative(xs)))))
        slack = max(slack, piece.deriv_lip * (xs[1] - xs[0]) / 2.0)
    return AHat(best, slack) if return_slack else best


# losses -------------------------------------------------------------------


@dataclass(frozen=True)
class Loss:
    """Nondecreasing loss of the absolute error, optionally truncated at ``trunc``."""

    kind: str
    p: float | None = None
    fn: Callable | None = field(default=None, compare=False)
    trunc: float | None = None

    def __post_init__(self):
        if self.kind == "power":
            if self.p is None or not self.p >= 1:
                raise InputError(f"power loss needs p >= 1, got {self.p!r}")
        elif self.kind == "custom":
            if self.fn is None:
                raise InputError("custom loss needs a callable")
            grid = np.linspace(0.0, 100.0, 2001)
            vals = np.asarray(self.fn(grid), dtype=float)
            if abs(float(self.fn(np.array(0.0)))) > 0:
                raise InputError("loss must vanish at 0")
            if np.any(np.diff(vals) < -1e-12):
                raise InputError("loss must be nondecreasing on [0, inf)")
        else:
            raise InputError(f"unknown loss kind {self.kind!r}")
        if self.trunc is not None and not self.trunc > 0:
            raise InputError("truncation level must be positive")

    @classmethod
    def power(cls, p: float = 2.0, trunc: float | None = None) -> "Loss":
        return cls("power", p=float(p), trunc=None if trunc is None else float(trunc))

    @classmethod
    def custom(cls, fn: Callable, trunc: float | None = None) -> "Loss":
        return cls("custom", fn=fn, trunc=trunc)

    @classmethod
    def from_dict(cls, obj: dict) -> "Loss":
        if not isinstance(obj, dict) or obj.get("kind") != "power_loss":
            raise InputError(f"loss descriptor must have kind 'power_loss', got {obj!r}")
        if "p" not in obj:
            raise InputError("power_loss descriptor is missing key 'p'")
        return cls.power(float(obj["p"]), obj.get("trunc"))

    def to_dict(self) -> dict:
        if self.kind != "power":
            raise InputError("custom losses have no JSON descriptor")
        return {"kind": "power_loss", "p": self.p, "trunc": self.trunc}

    @property
    def is_power(self) -> bool:
        return self.kind == "power"

    def raw(self, x):
        """Untruncated loss of ``|x|``."""
        ax = np.abs(np.asarray(x, dtype=float))
        if self.kind == "power":
            return ax if self.p == 1 else ax ** self.p
        return np.asarray(self.fn(ax), dtype=float)

    def truncated(self, M: float) -> "Loss":
        """Same loss truncated at ``min(trunc, M)``."""
        level = float(M) if self.trunc is None else min(self.trunc, float(M))
        return Loss(self.kind, p=self.p, fn=self.fn, trunc=level)

    def __call__(self, x):
        return loss_eval(self, x)

    def lipschitz_constant(self) -> float:
        """Lipschitz constant of the truncated loss (requires a truncation level)."""
        if self.trunc is None:
            raise InputError("Lipschitz constant needs a truncation level")
        if self.kind == "power":
            return self.p * self.trunc ** ((self.p - 1.0) / self.p)
        grid = np.linspace(0.0, 100.0, 100001)
        vals = np.minimum(self.raw(grid), self.trunc)
        return float(np.max(np.abs(np.diff(vals)) / np.diff(grid)))


def loss_eval(loss: Loss, x):
    v = loss.raw(x)
    if loss.trunc is not None:
        v = np.minimum(v, loss.trunc)
    return float(v) if np.ndim(v) == 0 else v
