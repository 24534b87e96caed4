"""Simulated asymptotic risk of bias-adjusted estimators and the optimal adjustment.

For a limit map ``g_fn`` (the plug-in estimate ``GHatEstimator`` or the exact
directional derivative at the truth), an envelope ``a`` and a Gaussian limit
``Z = S e`` with ``S S' = Sigma``, the risk of adding ``c`` is

    B(c) = sup_r  mean_i  loss_M1( a |g_fn(S e_i + r) - g_fn(r) + c| ),

with ``r`` ranging over the box ``[-M1, M1]^d``.  Every curve uses the same
draws ``e_1..e_L`` for all ``c`` and all ``r``.

Implementation notes
--------------------
* The inner average is invariant under ``r -> r + t 1_d``, so the search runs
  over ``r = (s, 0)`` with ``s`` in ``R^(d-1)``; a point is admissible when the
  range of its coordinates is at most ``2 M1`` (exactly the shifts of box points).
* For power losses with ``p`` in {1, 2} the mean loss over all ``c`` at one
  ``r`` is read off prefix sums of the sorted increments, so a 401-point
  c-grid costs one sort instead of 401 passes over the draws.
* The supremum over ``r`` is a coarse grid followed by rounds of per-coordinate
  zooming around the incumbents.  New points are shared by every ``c``, so the
  refined value at each ``c`` can only increase.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import qmc

from ._parallel import pmap
from ._rng import normal_draws
from ._validation import InputError, ResourceError, as_finite_vector, as_psd_matrix
from .equivariant import DirectionalDerivative, EquivariantMap, GHatEstimator
from .transform import Loss, Transform, f_bar_prime


@dataclass(frozen=True)
class RiskConfig:
    L: int = 100_000
    M1: float = 10.0
    c_grid_size: int = 401
    grid_points: int = 21
    refine_rounds: int = 5
    eta: float | str = "auto"
    seed: int = 0
    d: int | None = None
    search: str = "auto"  # "grid", "multistart" or "auto" (grid for d <= 3)
    multistart: int = 32
    max_incumbents: int = 8
    work_budget: float = 5e10
    threads: int | None = None
    chunk_elems: int = 1 << 22

    def __post_init__(self):
        if int(self.L) < 1:
            raise InputError("L must be >= 1")
        if not self.M1 > 0:
            raise InputError("M1 must be positive")
        if self.c_grid_size < 3 or self.c_grid_size % 2 == 0:
            raise InputError("c_grid_size must be an odd integer >= 3")
        if self.grid_points < 3:
            raise InputError("grid_points must be >= 3")
        if self.refine_rounds < 0:
            raise InputError("refine_rounds must be >= 0")
        if self.eta != "auto" and not (isinstance(self.eta, (int, float)) and self.eta >= 0):
            raise InputError(f"eta must be a nonnegative number or 'auto', got {self.eta!r}")
        if self.search not in ("auto", "grid", "multistart"):
            raise InputError(f"unknown search mode {self.search!r}")

    def c_grid(self) -> np.ndarray:
        return np.linspace(-self.M1, self.M1, self.c_grid_size)

    def replace(self, **changes) -> "RiskConfig":
        from dataclasses import replace

        return replace(self, **changes)


def auto_eta(L: int, n: int | None = None, eps_n: float | None = None) -> float:
    """Near-minimizer slack ``log(n + L) (L^-1/2 + n^-1/2 / eps_n + eps_n)``.

    Without a sample size (oracle curves) only the simulation term remains:
    ``log(L) L^-1/2``.
    """
    if n is None or eps_n is None:
        return math.log(max(L, 2)) / math.sqrt(L)
    return math.log(n + L) * (L ** -0.5 + n ** -0.5 / eps_n + eps_n)


class GaussianLimit:
    """Covariance of the Gaussian limit and a symmetric square root of it."""

    def __init__(self, sigma):
        sigma = as_psd_matrix(sigma)
        w, v = np.linalg.eigh(sigma)
        lam_max = max(float(w[-1]), 0.0)
        w = np.where(w > 1e-12 * lam_max, w, 0.0)
        self.sigma = sigma
        self.sqrt = (v * np.sqrt(w)) @ v.T
        err = np.max(np.abs(self.sqrt @ self.sqrt.T - sigma)) if sigma.size else 0.0
        if err > 1e-8 * max(1.0, lam_max):
            raise InputError(f"covariance square root reconstruction error {err:.3g} too large")

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]


def batch_sqrt(sigmas: np.ndarray) -> np.ndarray:
    """Clipped symmetric square roots of a stack of PSD matrices."""
    sigmas = 0.5 * (sigmas + np.swapaxes(sigmas, -1, -2))
    w, v = np.linalg.eigh(sigmas)
    lam = np.maximum(w[..., -1:], 0.0)
    w = np.where(w > 1e-12 * lam, w, 0.0)
    return (v * np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


class RiskValue(NamedTuple):
    value: float
    stderr: float
    argsup_r: np.ndarray


@dataclass
class RiskCurve:
    c_values: np.ndarray
    B_values: np.ndarray
    c_hat: float
    E_bounds: tuple[float, float]
    argsup_r: np.ndarray
    mc_stderr: np.ndarray
    eta: float
    a: float = 1.0
    boundary: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def B_min(self) -> float:
        return float(np.min(self.B_values))

    @property
    def argmin_c(self) -> float:
        """Grid minimizer; exact ties (e.g. a flat curve when ``a = 0``) resolve to the middle one."""
        idx = np.flatnonzero(self.B_values == self.B_values.min())
        return float(self.c_values[idx[(idx.size - 1) // 2]])

    @property
    def step(self) -> float:
        return float(self.c_values[1] - self.c_values[0])

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.argsup_r.shape[1]
        w.writerow(["c", "B_hat", "stderr"] + [f"argsup_r_{j}" for j in range(d)])
        for c, b, s, r in zip(self.c_values, self.B_values, self.mc_stderr, self.argsup_r):
            w.writerow([_fmt(c), _fmt(b), _fmt(s)] + [_fmt(v) for v in r])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "c_hat": float(self.c_hat),
            "E_inf": float(self.E_bounds[0]),
            "E_sup": float(self.E_bounds[1]),
            "eta": float(self.eta),
            "a": float(self.a),
            "B_min": self.B_min,
            "argmin_c": self.argmin_c,
            "boundary_hits": int(np.sum(self.boundary)) if self.boundary is not None else 0,
            **self.meta,
        }

    @classmethod
    def read_csv(cls, text: str) -> dict:
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
        return {h: body[:, j] for j, h in enumerate(header)}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# --------------------------------------------------------------------------
# mean loss over draws, for every c at once


def _fast_power(loss: Loss) -> bool:
    return loss.is_power and loss.p in (1.0, 2.0)


def _gather(P: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.take_along_axis(P, idx, axis=1)


def _batched_search(Ds: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise ``searchsorted``: ``Ds`` is (R, L) sorted per row, ``q`` is (R, m)."""
    R, L = Ds.shape
    lo = Ds[:, :1]
    span = Ds[:, -1:] - lo
    width = float(np.max(span)) + 4.0
    base = (np.arange(R, dtype=float) * width)[:, None]
    flat = (Ds - lo + base).ravel()
    qq = np.clip(q - lo, -1.0, span + 1.0) + base
    idx = np.searchsorted(flat, qq.ravel(), side="left").reshape(q.shape)
    return idx - (np.arange(R) * L)[:, None]


def mean_losses(D: np.ndarray, c: np.ndarray, a: np.ndarray | float, loss: Loss) -> np.ndarray:
    """``mean_i min(loss(a |D_i + c|), trunc)`` for every row of ``D`` and every ``c``.

    ``D`` has shape (..., L); ``a`` broadcasts against the leading axes.  The
    result has shape (..., len(c)).
    """
    lead, L = D.shape[:-1], D.shape[-1]
    c = np.asarray(c, dtype=float)
    a_rows = np.broadcast_to(np.asarray(a, dtype=float), lead).reshape(-1, 1)
    Dr = D.reshape(-1, L)
    T = np.inf if loss.trunc is None else float(loss.trunc)
    if not _fast_power(loss):
        out = np.empty((Dr.shape[0], c.size))
        for j, cj in enumerate(c):
            vals = loss.raw(a_rows * (Dr + cj))
            out[:, j] = np.mean(np.minimum(vals, T), axis=1)
        return out.reshape(lead + (c.size,))

    p = loss.p
    Ds = np.sort(Dr, axis=1)
    zero = np.zeros((Ds.shape[0], 1))
    P1 = np.concatenate([zero, np.cumsum(Ds, axis=1)], axis=1)
    with np.errstate(divide="ignore"):
        h = np.where(a_rows > 0, T ** (1.0 / p) / a_rows, np.inf)
    cc = c[None, :]
    lo = _batched_search(Ds, -cc - h)
    hi = _batched_search(Ds, -cc + h)
    inside = hi - lo
    if p == 2.0:
        P2 = np.concatenate([zero, np.cumsum(Ds * Ds, axis=1)], axis=1)
        s = (_gather(P2, hi) - _gather(P2, lo)) + 2.0 * cc * (_gather(P1, hi) - _gather(P1, lo)) + cc * cc * inside
        total = a_rows ** 2 * s
    else:
        mid = _batched_search(Ds, np.broadcast_to(-cc, lo.shape))
        mid = np.clip(mid, lo, hi)
        upper = (_gather(P1, hi) - _gather(P1, mid)) + cc * (hi - mid)
        lower = (_gather(P1, mid) - _gather(P1, lo)) + cc * (mid - lo)
        total = a_rows * (upper - lower)
    if np.isfinite(T):
        total = total + T * (L - inside)
    return (total / L).reshape(lead + (c.size,))


# --------------------------------------------------------------------------
# supremum over r


class _Problem:
    """Risk tables for a batch of limit maps sharing the same draws."""

    def __init__(self, g_fn: Callable, a: np.ndarray, sqrts: np.ndarray, draws: np.ndarray,
                 c: np.ndarray, loss: Loss, cfg: RiskConfig):
        self.g_fn = g_fn
        self.a = a  # (B,)
        self.Z = np.einsum("ld,bkd->blk", draws, sqrts)  # (B, L, d)
        self.B, self.L, self.d = self.Z.shape
        self.c = c
        self.loss = loss
        self.cfg = cfg

    def full_r(self, s: np.ndarray) -> np.ndarray:
        return np.concatenate([s, np.zeros(s.shape[:-1] + (1,))], axis=-1)

    def increments(self, r: np.ndarray) -> np.ndarray:
        """``g_fn(Z + r) - g_fn(r)`` with shape (B, k, L) for ``r`` of shape (B, k, d)."""
        X = self.Z[:, None, :, :] + r[:, :, None, :]
        return self.g_fn(X) - self.g_fn(r)[..., None]

    def table(self, s: np.ndarray) -> np.ndarray:
        """Mean losses (B, k, n_c) at the points ``r = (s, 0)``, ``s`` of shape (B, k, d-1)."""
        r = self.full_r(s)
        k = r.shape[1]
        per = max(1, int(self.cfg.chunk_elems // max(1, self.B * self.L * self.d)))
        chunks = [slice(i, min(k, i + per)) for i in range(0, k, per)]
        a = self.a[:, None]
        parts = pmap(lambda sl: mean_losses(self.increments(r[:, sl]), self.c, a, self.loss),
                     chunks, self.cfg.threads)
        return np.concatenate(parts, axis=1)


def _admissible(s: np.ndarray, M1: float) -> np.ndarray:
    hi = np.maximum(np.max(s, axis=-1), 0.0) if s.shape[-1] else np.zeros(s.shape[:-1])
    lo = np.minimum(np.min(s, axis=-1), 0.0) if s.shape[-1] else np.zeros(s.shape[:-1])
    return hi - lo <= 2.0 * M1 * (1.0 + 1e-12)


def _initial_points(d: int, cfg: RiskConfig) -> tuple[np.ndarray, float]:
    M1 = cfg.M1
    if d == 1:
        return np.zeros((1, 0)), 0.0
    mode = cfg.search
    if mode == "auto":
        mode = "grid" if d <= 3 else "multistart"
    h0 = 2.0 * M1 / (cfg.grid_points - 1)
    if mode == "grid":
        axis = np.linspace(-2.0 * M1, 2.0 * M1, 2 * cfg.grid_points - 1)
        mesh = np.stack(np.meshgrid(*([axis] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
        pts = mesh[_admissible(mesh, M1)]
        work = float(cfg.grid_points) ** d * cfg.L
        if work > cfg.work_budget:
            raise ResourceError(
                f"r-grid needs {cfg.grid_points}^{d} x L = {work:.3g} evaluations, above the budget "
                f"{cfg.work_budget:.3g}; use search='multistart' or lower grid_points/L")
        return pts, h0
    box = qmc.LatinHypercube(d=d, seed=cfg.seed).random(cfg.multistart) * 2.0 * M1 - M1
    pts = np.vstack([np.zeros((1, d - 1)), box[:, :-1] - box[:, -1:]])
    return pts, M1 / 2.0


def _incumbents(best_val: np.ndarray, best_s: np.ndarray, m: int) -> np.ndarray:
    """Distinct argsup points, taken in order of increasing risk (the c-region that matters)."""
    rows = best_s[np.argsort(best_val, kind="stable")]
    _, first = np.unique(rows, axis=0, return_index=True)
    picked = rows[np.sort(first)[:m]]
    if picked.shape[0] < m:
        picked = np.concatenate([picked, np.repeat(picked[:1], m - picked.shape[0], axis=0)])
    return picked


def _sup_over_r(prob: _Problem) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(best_val (B, n_c), best_s (B, n_c, d-1))``."""
    cfg, d, B = prob.cfg, prob.d, prob.B
    pts, step = _initial_points(d, cfg)
    s0 = np.broadcast_to(pts, (B,) + pts.shape)
    tab = prob.table(s0)
    k_best = np.argmax(tab, axis=1)  # (B, n_c)
    best_val = np.take_along_axis(tab, k_best[:, None, :], axis=1)[:, 0, :]
    best_s = pts[k_best]  # (B, n_c, d-1)
    if d == 1:
        return best_val, best_s
    offsets = np.array([-2.0, -1.0, 1.0, 2.0]) / 3.0
    m = max(1, min(cfg.max_incumbents, prob.c.size))
    for _ in range(cfg.refine_rounds):
        inc = np.stack([_incumbents(best_val[b], best_s[b], m) for b in range(B)])  # (B, m, d-1)
        new = []
        for j in range(d - 1):
            for off in offsets:
                q = inc.copy()
                q[..., j] += off * step
                new.append(q)
        cand = np.concatenate(new, axis=1)
        cand = np.clip(cand, -2.0 * cfg.M1, 2.0 * cfg.M1)
        tab = prob.table(cand)
        tab = np.where(_admissible(cand, cfg.M1)[..., None], tab, -np.inf)
        k_new = np.argmax(tab, axis=1)
        val_new = np.take_along_axis(tab, k_new[:, None, :], axis=1)[:, 0, :]
        s_new = cand[np.arange(B)[:, None], k_new]
        better = val_new > best_val
        best_val = np.where(better, val_new, best_val)
        best_s = np.where(better[..., None], s_new, best_s)
        step /= 3.0
    return best_val, best_s


def _box_representative(s: np.ndarray, M1: float) -> tuple[np.ndarray, np.ndarray]:
    r = np.concatenate([s, np.zeros(s.shape[:-1] + (1,))], axis=-1)
    hi, lo = r.max(axis=-1, keepdims=True), r.min(axis=-1, keepdims=True)
    r = r - 0.5 * (hi + lo)
    on_boundary = (hi - lo)[..., 0] >= 2.0 * M1 * (1.0 - 1e-9)
    return r, on_boundary


# --------------------------------------------------------------------------
# public operations


def _check_dims(g_fn, limit: GaussianLimit, cfg: RiskConfig) -> int:
    d = limit.dim
    g_dim = getattr(g_fn, "dim", None)
    if g_dim is not None and g_dim != d:
        raise InputError(f"limit map has dimension {g_dim} but covariance is {d}x{d}")
    if cfg.d is not None and cfg.d != d:
        raise InputError(f"config dimension d={cfg.d} does not match covariance {d}x{d}")
    return d


def _eta(cfg: RiskConfig, n: int | None, eps_n: float | None) -> float:
    return auto_eta(cfg.L, n, eps_n) if cfg.eta == "auto" else float(cfg.eta)


def _stderr_at(g_fn, Z: np.ndarray, r: np.ndarray, c: np.ndarray, a: float, loss: Loss) -> np.ndarray:
    """Monte Carlo standard error of the mean loss at each (r_j, c_j) pair."""
    out = np.empty(c.size)
    keys, inv = np.unique(r, axis=0, return_inverse=True)
    inv = np.asarray(inv).reshape(-1)
    for k, rk in enumerate(keys):
        D = g_fn(Z + rk) - g_fn(rk)
        sel = np.flatnonzero(inv == k)
        for j in sel:
            vals = np.minimum(loss.raw(a * (D + c[j])), np.inf if loss.trunc is None else loss.trunc)
            out[j] = np.std(vals, ddof=1) / math.sqrt(D.size) if D.size > 1 else 0.0
    return out


def risk_table(g_fn: Callable, a: float, limit: GaussianLimit, loss: Loss, cfg: RiskConfig,
               c_values, with_stderr: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Simulated risk at each ``c``: values, stderrs, argsup ``r`` (box representative) and boundary flags."""
    d = _check_dims(g_fn, limit, cfg)
    if not (np.isfinite(a) and a >= 0):
        raise InputError(f"envelope a must be nonnegative, got {a!r}")
    c_values = np.atleast_1d(np.asarray(c_values, dtype=float))
    loss = loss.truncated(cfg.M1)
    draws = normal_draws(cfg.seed, int(cfg.L), d, cfg.threads)
    prob = _Problem(g_fn, np.array([float(a)]), limit.sqrt[None], draws, c_values, loss, cfg)
    best_val, best_s = _sup_over_r(prob)
    r, boundary = _box_representative(best_s[0], cfg.M1)
    if with_stderr:
        stderr = _stderr_at(g_fn, prob.Z[0], r, c_values, float(a), loss)
    else:
        stderr = np.full(c_values.size, np.nan)
    return best_val[0], stderr, r, boundary


def simulate_B(g_fn: Callable, a: float, limit: GaussianLimit, loss: Loss, cfg: RiskConfig,
               c: float) -> RiskValue:
    """Simulated risk of the adjustment ``c`` with its Monte Carlo standard error."""
    vals, se, r, _ = risk_table(g_fn, a, limit, loss, cfg, [c])
    return RiskValue(float(vals[0]), float(se[0]), r[0])


def _select(c: np.ndarray, B: np.ndarray, eta: float) -> tuple[float, tuple[float, float]]:
    E = c[B <= np.min(B) + eta]
    lo, hi = float(E.min()), float(E.max())
    return 0.5 * (lo + hi), (lo, hi)


def select_c_hat(g_fn: Callable, a: float, limit: GaussianLimit, loss: Loss, cfg: RiskConfig,
                 n: int | None = None, eps_n: float | None = None, with_stderr: bool = True) -> RiskCurve:
    """Risk curve over the c-grid and the midpoint of its near-minimizer set."""
    c = cfg.c_grid()
    vals, se, r, boundary = risk_table(g_fn, a, limit, loss, cfg, c, with_stderr=with_stderr)
    eta = _eta(cfg, n, eps_n)
    c_hat, bounds = _select(c, vals, eta)
    meta = {"L": int(cfg.L), "M1": float(cfg.M1), "seed": int(cfg.seed), "c_grid_size": int(cfg.c_grid_size)}
    return RiskCurve(c, vals, c_hat, bounds, r, se, eta, float(a), boundary, meta)


class ShiftedMaps:
    """A batch of maps ``z -> g(z + shift_b)``; the first axis of the input is the batch axis."""

    def __init__(self, g: EquivariantMap, shifts: np.ndarray):
        self.g = g
        self.shifts = np.asarray(shifts, dtype=float)

    @property
    def dim(self) -> int:
        return self.g.dim

    def __call__(self, X: np.ndarray) -> np.ndarray:
        sh = self.shifts.reshape((self.shifts.shape[0],) + (1,) * (X.ndim - 2) + (self.g.dim,))
        return self.g.evaluate(X + sh)


def c_hat_batch(g: EquivariantMap, beta_tildes, sigma_hats, eps_n: float, a, loss: Loss,
                cfg: RiskConfig, n: int | None = None, batch: int = 32) -> np.ndarray:
    """ĉ for many (β̃, Σ̂) pairs at once, all sharing the draws of ``cfg.seed``.

    Identical to calling :func:`select_c_hat` with a :class:`GHatEstimator`
    per pair (up to floating-point rounding of the batched arithmetic).
    """
    betas = np.asarray(beta_tildes, dtype=float)
    R, d = betas.shape
    sqrts = batch_sqrt(np.asarray(sigma_hats, dtype=float))
    a = np.broadcast_to(np.asarray(a, dtype=float), (R,))
    shifts = (betas - g.evaluate(betas)[:, None]) / eps_n
    loss = loss.truncated(cfg.M1)
    draws = normal_draws(cfg.seed, int(cfg.L), d, cfg.threads)
    c = cfg.c_grid()
    eta = _eta(cfg, n, eps_n)
    out = np.empty(R)
    for i in range(0, R, batch):
        sl = slice(i, min(R, i + batch))
        prob = _Problem(ShiftedMaps(g, shifts[sl]), a[sl], sqrts[sl], draws, c, loss, cfg)
        vals, _ = _sup_over_r(prob)
        for j, row in enumerate(vals):
            out[i + j] = _select(c, row, eta)[0]
    return out


def oracle_g_fn(beta0, g: EquivariantMap, tie_tol: float | None = None) -> DirectionalDerivative:
    return DirectionalDerivative(g, beta0, tie_tol)


def oracle_B(beta0, g: EquivariantMap, f: Transform, limit: GaussianLimit, loss: Loss,
             cfg: RiskConfig, c: float) -> RiskValue:
    """Risk bound at ``c`` using the exact directional derivative and envelope at ``beta0``."""
    beta0 = as_finite_vector(beta0, "beta0", g.dim)
    a = f_bar_prime(f, g.evaluate(beta0))
    return simulate_B(oracle_g_fn(beta0, g), a, limit, loss, cfg, c)


def oracle_curve(beta0, g: EquivariantMap, f: Transform, limit: GaussianLimit, loss: Loss,
                 cfg: RiskConfig, with_stderr: bool = True) -> RiskCurve:
    beta0 = as_finite_vector(beta0, "beta0", g.dim)
    a = f_bar_prime(f, g.evaluate(beta0))
    return select_c_hat(oracle_g_fn(beta0, g), a, limit, loss, cfg, with_stderr=with_stderr)


__all__ = [
    "GHatEstimator",
    "GaussianLimit",
    "RiskConfig",
    "RiskCurve",
    "RiskValue",
    "auto_eta",
    "c_hat_batch",
    "mean_losses",
    "oracle_B",
    "oracle_curve",
    "risk_table",
    "select_c_hat",
    "simulate_B",
]
