"""Monte Carlo checks of worst-case local risk, local robustification and risk discontinuity.

Local alternatives are mean vectors ``beta0 + (b / sqrt(n)) u`` for unit
directions ``u``; data are i.i.d. ``N(beta_true, Sigma)``.  All alternatives
(and all estimators run with the same seed) share one set of standardized
noise draws, so comparisons between estimators are paired.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._rng import normal_draws, substream_seed
from ._validation import InputError, as_finite_vector, as_psd_matrix
from .equivariant import EquivariantMap
from .estimator import PluginEstimator, eps_from_rule
from .risk import GaussianLimit, RiskConfig, oracle_curve
from .transform import Loss, Transform, f_bar_prime, f_eval

Z975 = 1.959963984540054


def direction_set(d: int, directions=None, seed: int = 0) -> np.ndarray:
    """Unit vectors: an explicit array, or a count (default 16 for d=2, 64 otherwise)."""
    if directions is not None and not np.isscalar(directions):
        u = np.atleast_2d(np.asarray(directions, dtype=float))
        if u.shape[1] != d:
            raise InputError(f"directions must have {d} columns, got {u.shape}")
        norms = np.linalg.norm(u, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-10):
            raise InputError("directions must be unit vectors")
        return u
    if d == 1:
        return np.array([[1.0], [-1.0]])
    k = int(directions) if directions is not None else (16 if d == 2 else 64)
    if k < 1:
        raise InputError("need at least one direction")
    if d == 2:
        ang = 2.0 * np.pi * np.arange(k) / k
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if d == 3:
        # Fibonacci sphere
        i = np.arange(k) + 0.5
        phi = np.arccos(1.0 - 2.0 * i / k)
        th = np.pi * (1.0 + 5.0 ** 0.5) * i
        return np.column_stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])
    u = normal_draws(substream_seed(seed, 7), k, d)
    return u / np.linalg.norm(u, axis=1, keepdims=True)


@dataclass(frozen=True)
class LocalRiskSpec:
    beta0: np.ndarray
    sigma: np.ndarray
    b_grid: tuple[float, ...]
    n: int
    reps: int
    g: EquivariantMap
    f: Transform
    loss: Loss
    directions: object = None
    seed: int = 0

    def __post_init__(self):
        beta0 = as_finite_vector(self.beta0, "beta0", self.g.dim)
        sigma = as_psd_matrix(self.sigma)
        if sigma.shape[0] != beta0.size:
            raise InputError("sigma and beta0 dimensions disagree")
        b = tuple(float(v) for v in self.b_grid)
        if not b or any(v < 0 for v in b):
            raise InputError("b_grid must be a nonempty list of nonnegative values")
        if int(self.reps) < 1:
            raise InputError("reps must be >= 1")
        if int(self.n) < 2:
            raise InputError("n must be >= 2")
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "b_grid", b)

    @property
    def dirs(self) -> np.ndarray:
        return direction_set(self.g.dim, self.directions, self.seed)

    def with_center(self, beta0) -> "LocalRiskSpec":
        from dataclasses import replace

        return replace(self, beta0=np.asarray(beta0, dtype=float))


@dataclass
class RiskTable:
    """Per (b, direction) mean truncated loss with normal-approximation CIs."""

    b: np.ndarray
    direction_id: np.ndarray
    risk: np.ndarray
    stderr: np.ndarray
    sup_flag: np.ndarray
    losses: np.ndarray | None = field(default=None, repr=False)

    def sup_by_b(self) -> dict[float, tuple[float, float]]:
        out = {}
        for bv in np.unique(self.b):
            i = np.flatnonzero((self.b == bv) & self.sup_flag)[0]
            out[float(bv)] = (float(self.risk[i]), float(self.stderr[i]))
        return out

    @property
    def sup_index(self) -> int:
        return int(np.argmax(self.risk))

    @property
    def sup_risk(self) -> float:
        return float(self.risk[self.sup_index])

    @property
    def sup_stderr(self) -> float:
        return float(self.stderr[self.sup_index])

    def sup_ci(self) -> tuple[float, float]:
        h = Z975 * self.sup_stderr
        return self.sup_risk - h, self.sup_risk + h

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["b", "direction_id", "risk", "stderr", "sup_flag"])
        for row in zip(self.b, self.direction_id, self.risk, self.stderr, self.sup_flag):
            w.writerow([format(row[0], ".17g"), int(row[1]), format(row[2], ".17g"),
                        format(row[3], ".17g"), int(row[4])])
        return buf.getvalue()


def _noise(spec: LocalRiskSpec, need_data: bool):
    """Shared noise: per-replication mean, sample covariance and (optionally) full data."""
    d, n, R = spec.g.dim, spec.n, spec.reps
    S = GaussianLimit(spec.sigma).sqrt
    std = normal_draws(substream_seed(spec.seed, 1), R * n, d).reshape(R, n, d)
    e = std @ S.T
    ebar = e.mean(axis=1)
    centered = e - ebar[:, None, :]
    sig = np.einsum("rni,rnj->rij", centered, centered) / (n - 1)
    return ebar, sig, (e if need_data else None)


def _estimates(estimator, beta_true, ebar, sig, data, n) -> np.ndarray:
    if hasattr(estimator, "estimate_many"):
        return np.asarray(estimator.estimate_many(beta_true + ebar, sig, n), dtype=float)
    # generic sklearn-style estimator: fit on each dataset, read theta_
    return np.array([float(estimator.fit(beta_true + X).theta_) for X in data])


def worst_case_risk(spec: LocalRiskSpec, estimator, keep_losses: bool = False) -> RiskTable:
    """Mean of the truncated loss of ``sqrt(n) (estimate - f(g(beta_true)))`` over the local alternatives.

    ``estimator`` is anything with ``estimate_many(beta_tildes, sigma_hats, n)``
    (the built-in estimators) or a ``fit(X)`` method setting ``theta_``.
    At ``b = 0`` all directions coincide and are computed once.
    """
    if spec.loss.trunc is None:
        raise InputError("worst-case risk needs a truncated loss")
    n, sqn = spec.n, math.sqrt(spec.n)
    dirs = spec.dirs
    ebar, sig, data = _noise(spec, not hasattr(estimator, "estimate_many"))
    rows_b, rows_k, risk, se, losses = [], [], [], [], []
    for bv in spec.b_grid:
        cache = None
        for k, u in enumerate(dirs):
            if bv > 0 or cache is None:
                beta_true = spec.beta0 + (bv / sqn) * u
                theta_true = float(f_eval(spec.f, spec.g.evaluate(beta_true)))
                est = _estimates(estimator, beta_true, ebar, sig, data, n)
                cache = spec.loss(sqn * (est - theta_true))
            lv = cache
            rows_b.append(bv)
            rows_k.append(k)
            risk.append(float(np.mean(lv)))
            se.append(float(np.std(lv, ddof=1) / math.sqrt(lv.size)) if lv.size > 1 else 0.0)
            if keep_losses:
                losses.append(lv)
    b = np.array(rows_b)
    risk_a = np.array(risk)
    flag = np.zeros(b.size, dtype=bool)
    for bv in spec.b_grid:
        idx = np.flatnonzero(b == bv)
        flag[idx[np.argmax(risk_a[idx])]] = True
    return RiskTable(b, np.array(rows_k), risk_a, np.array(se), flag,
                     np.array(losses) if keep_losses else None)


def minimax_risk_bound(spec: LocalRiskSpec, cfg: RiskConfig) -> float:
    """``inf_c B(c)`` at ``spec.beta0`` from the exact directional derivative and envelope."""
    curve = oracle_curve(spec.beta0, spec.g, spec.f, GaussianLimit(spec.sigma), spec.loss, cfg,
                         with_stderr=False)
    return curve.B_min


@dataclass(frozen=True)
class RobustSweepSpec:
    base: LocalRiskSpec
    eps_rule: object = "n^-1/3"
    perturbations: object = 4  # count of directions, or explicit vectors of norm <= 1 (units of eps_n)

    @property
    def eps_n(self) -> float:
        eps = eps_from_rule(self.base.n, self.eps_rule)
        return eps

    def offsets(self) -> np.ndarray:
        d = self.base.g.dim
        if np.isscalar(self.perturbations):
            w = direction_set(d, int(self.perturbations), self.base.seed)
        else:
            w = np.atleast_2d(np.asarray(self.perturbations, dtype=float))
            if w.shape[1] != d:
                raise InputError(f"perturbations must have {d} columns")
            if np.any(np.linalg.norm(w, axis=1) > 1.0 + 1e-10):
                raise InputError("perturbation vectors must have norm <= 1 (they are scaled by eps_n)")
        return self.eps_n * w


@dataclass
class RobustTable:
    centers: np.ndarray
    tables: list[RiskTable]
    bound: float | None = None

    @property
    def sup_risks(self) -> np.ndarray:
        return np.array([t.sup_risk for t in self.tables])

    @property
    def overall_index(self) -> int:
        return int(np.argmax(self.sup_risks))

    @property
    def overall_sup(self) -> float:
        return float(self.sup_risks[self.overall_index])

    @property
    def overall_stderr(self) -> float:
        return self.tables[self.overall_index].sup_stderr

    @property
    def gap(self) -> float | None:
        return None if self.bound is None else self.overall_sup - self.bound

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.centers.shape[1]
        w.writerow(["center_id"] + [f"center_{j}" for j in range(d)] + ["sup_risk", "stderr", "b_at_sup"])
        for i, (c, t) in enumerate(zip(self.centers, self.tables)):
            w.writerow([i] + [format(v, ".17g") for v in c]
                       + [format(t.sup_risk, ".17g"), format(t.sup_stderr, ".17g"),
                          format(float(t.b[t.sup_index]), ".17g")])
        return buf.getvalue()


def robustified_risk(spec: RobustSweepSpec, estimator, cfg: RiskConfig | None = None) -> RobustTable:
    """Worst-case risk re-centred at each perturbed ``beta`` in the eps_n-ball.

    Row 0 is the unperturbed centre.  With ``cfg`` the minimax bound at the
    original centre is attached and the gap reported.
    """
    base = spec.base
    centers = np.vstack([base.beta0[None, :], base.beta0 + spec.offsets()])
    tables = [worst_case_risk(base.with_center(c), estimator) for c in centers]
    bound = minimax_risk_bound(base, cfg) if cfg is not None else None
    return RobustTable(centers, tables, bound)


@dataclass
class DiscontinuityCurve:
    t: np.ndarray
    g_beta0: np.ndarray
    f_bar_prime: np.ndarray
    min_B: np.ndarray
    argmin_c: np.ndarray

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "g_beta0", "f_bar_prime", "min_B", "argmin_c"])
        for row in zip(self.t, self.g_beta0, self.f_bar_prime, self.min_B, self.argmin_c):
            w.writerow([format(float(v), ".17g") for v in row])
        return buf.getvalue()


def discontinuity_sweep(path: Callable[[float], Sequence[float]], t_grid, f: Transform, g: EquivariantMap,
                        loss: Loss, cfg: RiskConfig, sigma=None) -> DiscontinuityCurve:
    """``inf_c B(c)`` along ``beta0(t)``; jumps appear where ``g(beta0(t))`` crosses a kink of ``f``."""
    t_grid = np.asarray(t_grid, dtype=float)
    limit = GaussianLimit(np.eye(g.dim) if sigma is None else sigma)
    gb, fb, mb, am = [], [], [], []
    for t in t_grid:
        beta0 = as_finite_vector(path(float(t)), "beta0(t)", g.dim)
        curve = oracle_curve(beta0, g, f, limit, loss, cfg, with_stderr=False)
        gv = g.evaluate(beta0)
        gb.append(gv)
        fb.append(f_bar_prime(f, gv))
        mb.append(curve.B_min)
        am.append(curve.argmin_c)
    return DiscontinuityCurve(t_grid, np.array(gb), np.array(fb), np.array(mb), np.array(am))


def linear_path(origin, direction) -> Callable[[float], np.ndarray]:
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    return lambda t: origin + t * direction


def plugin_for(spec: LocalRiskSpec) -> PluginEstimator:
    return PluginEstimator(g=spec.g, f=spec.f)
