"""Bias-adjusted minimax estimator ``f(g(beta_tilde) + c_hat / sqrt(n))``.

The estimator needs an efficient estimate ``beta_tilde`` of the regular
parameter and a consistent covariance estimate ``sigma_hat``.  The built-in
plug-in (column means and sample covariance) is efficient for the Gaussian
location model; for anything else pass your own ``(beta_tilde, sigma_hat, n)``
to :func:`estimate_from_moments` or :meth:`MinimaxEstimator.fit_moments`.
Whether your estimator is asymptotically normal uniformly over local
alternatives is not checked here.

Linear nodes must have weights summing to one, so parameters such as
``max(beta_1 + beta_2 - 1, 0)`` are encoded by rescaling inside ``f``::

    g = EquivariantMap.linear([0.5, 0.5])     # (beta_1 + beta_2) / 2
    f = Transform.hinge(2.0, -1.0)            # max(2 x - 1, 0)
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import InputError, as_finite_vector, as_psd_matrix
from .equivariant import EquivariantMap, GHatEstimator
from .risk import GaussianLimit, RiskConfig, RiskCurve, c_hat_batch, select_c_hat
from .transform import Loss, Transform, a_hat, f_eval

EPS_RULES = {
    "n^-1/3": lambda n: n ** (-1.0 / 3.0),
    "n^-1/2 log n": lambda n: math.log(n) / math.sqrt(n),
}
_EPS_ALIASES = {"cube_root": "n^-1/3", "log": "n^-1/2 log n"}


def eps_from_rule(n: int, rule="n^-1/3") -> float:
    """Bandwidth ``eps_n`` for the directional-derivative estimate; must satisfy ``eps_n sqrt(n) >= 1``."""
    if isinstance(rule, str):
        key = _EPS_ALIASES.get(rule, rule)
        if key not in EPS_RULES:
            raise InputError(f"unknown eps rule {rule!r}; use one of {sorted(EPS_RULES)} or a number")
        eps = EPS_RULES[key](n)
    else:
        eps = float(rule)
    if not (np.isfinite(eps) and eps > 0):
        raise InputError(f"eps_n must be positive, got {eps!r}")
    if eps * math.sqrt(n) < 1.0:
        raise InputError(f"eps_n = {eps:.4g} violates eps_n * sqrt(n) >= 1 at n = {n}")
    return eps


@dataclass(frozen=True)
class EfficientEstimate:
    beta_tilde: np.ndarray
    sigma_hat: np.ndarray
    n: int

    def __post_init__(self):
        beta = as_finite_vector(self.beta_tilde, "beta_tilde")
        sigma = as_psd_matrix(self.sigma_hat, "sigma_hat")
        if sigma.shape[0] != beta.size:
            raise InputError(f"sigma_hat is {sigma.shape} but beta_tilde has length {beta.size}")
        if int(self.n) < 2:
            raise InputError("n must be >= 2")
        object.__setattr__(self, "beta_tilde", beta)
        object.__setattr__(self, "sigma_hat", sigma)
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def from_data(cls, data) -> "EfficientEstimate":
        X = np.asarray(data, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise InputError(f"data must be an n x d matrix, got shape {X.shape}")
        if X.shape[0] < 2:
            raise InputError("need at least two observations")
        if not np.all(np.isfinite(X)):
            raise InputError("data contains non-finite entries")
        sigma = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
        return cls(X.mean(axis=0), sigma, X.shape[0])


@dataclass
class EstimateReport:
    theta_mx: float
    theta_plugin: float
    c_hat: float
    a_hat: float
    a_hat_slack: float
    eps_n: float
    g_beta: float
    n: int
    seed: int
    risk_curve: RiskCurve
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "theta_mx": self.theta_mx,
            "theta_plugin": self.theta_plugin,
            "c_hat": self.c_hat,
            "a_hat": self.a_hat,
            "a_hat_slack": self.a_hat_slack,
            "eps_n": self.eps_n,
            "g_beta": self.g_beta,
            "n": self.n,
            "seed": self.seed,
            "risk_curve": self.risk_curve.sidecar(),
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out


def _check_truncation(loss: Loss, cfg: RiskConfig) -> None:
    if loss.trunc is not None and loss.trunc > cfg.M1:
        raise InputError(f"M1 = {cfg.M1} must be at least the loss truncation level {loss.trunc}")


def estimate_from_moments(est: EfficientEstimate, g: EquivariantMap, f: Transform, loss: Loss,
                          cfg: RiskConfig | None = None, eps_rule="n^-1/3") -> EstimateReport:
    cfg = RiskConfig() if cfg is None else cfg
    t0 = time.perf_counter()
    if est.beta_tilde.size != g.dim:
        raise InputError(f"beta_tilde has length {est.beta_tilde.size} but g has dimension {g.dim}")
    _check_truncation(loss, cfg)
    n = est.n
    eps = eps_from_rule(n, eps_rule)
    g_hat = GHatEstimator(g, est.beta_tilde, eps)
    g_beta = g.evaluate(est.beta_tilde)
    ah = a_hat(f, g_beta, eps, return_slack=True)
    limit = GaussianLimit(est.sigma_hat)
    # for power losses the minimizer does not depend on the envelope
    a_sim = 1.0 if loss.is_power else ah.value
    curve = select_c_hat(g_hat, a_sim, limit, loss, cfg, n=n, eps_n=eps)
    theta = float(f_eval(f, g_beta + curve.c_hat / math.sqrt(n)))
    return EstimateReport(
        theta_mx=theta,
        theta_plugin=float(f_eval(f, g_beta)),
        c_hat=float(curve.c_hat),
        a_hat=float(ah.value),
        a_hat_slack=float(ah.slack),
        eps_n=eps,
        g_beta=float(g_beta),
        n=n,
        seed=int(cfg.seed),
        risk_curve=curve,
        wall_time=time.perf_counter() - t0,
    )


def estimate_from_data(data, g: EquivariantMap, f: Transform, loss: Loss,
                       cfg: RiskConfig | None = None, eps_rule="n^-1/3") -> EstimateReport:
    return estimate_from_moments(EfficientEstimate.from_data(data), g, f, loss, cfg, eps_rule)


def _default_map(g, d: int) -> EquivariantMap:
    if g is not None:
        return g
    if d != 1:
        raise InputError("g must be given for multivariate data")
    return EquivariantMap.identity()


class MinimaxEstimator(BaseEstimator):
    """Local asymptotic minimax estimator of ``f(g(beta))``.

    Parameters
    ----------
    g : EquivariantMap, optional
        Inner map; defaults to the identity for univariate data.
    f : Transform, optional
        Outer map; defaults to the identity.
    loss : Loss, optional
        Defaults to squared error truncated at ``M1``.
    L, M1, c_grid_size, grid_points, refine_rounds, max_incumbents, eta, seed, threads
        Risk simulation settings, see :class:`RiskConfig`.
    eps_rule : str or float
        ``"n^-1/3"`` (default), ``"n^-1/2 log n"`` or an explicit bandwidth.

    Attributes
    ----------
    theta_ : float
        The bias-adjusted estimate.
    c_hat_ : float
    report_ : EstimateReport
    risk_curve_ : RiskCurve
    """

    def __init__(self, g=None, f=None, loss=None, L=100_000, M1=10.0, c_grid_size=401,
                 grid_points=21, refine_rounds=5, max_incumbents=8, eta="auto", eps_rule="n^-1/3", seed=0,
                 threads=None):
        self.g = g
        self.f = f
        self.loss = loss
        self.L = L
        self.M1 = M1
        self.c_grid_size = c_grid_size
        self.grid_points = grid_points
        self.refine_rounds = refine_rounds
        self.max_incumbents = max_incumbents
        self.eta = eta
        self.eps_rule = eps_rule
        self.seed = seed
        self.threads = threads

    def risk_config(self) -> RiskConfig:
        return RiskConfig(L=self.L, M1=self.M1, c_grid_size=self.c_grid_size, grid_points=self.grid_points,
                          refine_rounds=self.refine_rounds, max_incumbents=self.max_incumbents, eta=self.eta,
                          seed=self.seed, threads=self.threads)

    def _parts(self, d: int):
        g = _default_map(self.g, d)
        f = Transform.identity() if self.f is None else self.f
        loss = Loss.power(2.0, trunc=self.M1) if self.loss is None else self.loss
        return g, f, loss

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        est = EfficientEstimate.from_data(X)
        return self.fit_moments(est.beta_tilde, est.sigma_hat, est.n)

    def fit_moments(self, beta_tilde, sigma_hat, n):
        est = EfficientEstimate(beta_tilde, sigma_hat, n)
        g, f, loss = self._parts(est.beta_tilde.size)
        self.report_ = estimate_from_moments(est, g, f, loss, self.risk_config(), self.eps_rule)
        self.theta_ = self.report_.theta_mx
        self.c_hat_ = self.report_.c_hat
        self.risk_curve_ = self.report_.risk_curve
        self.n_features_in_ = est.beta_tilde.size
        return self

    def estimate_many(self, beta_tildes, sigma_hats, n: int) -> np.ndarray:
        """Estimates for many ``(beta_tilde, sigma_hat)`` pairs sharing ``n``; each gets its own ``c_hat``."""
        betas = np.asarray(beta_tildes, dtype=float)
        g, f, loss = self._parts(betas.shape[1])
        cfg = self.risk_config()
        _check_truncation(loss, cfg)
        eps = eps_from_rule(n, self.eps_rule)
        g_beta = g.evaluate(betas)
        if loss.is_power:
            a = np.ones(betas.shape[0])
        else:
            a = np.array([a_hat(f, v, eps) for v in g_beta])
        c = c_hat_batch(g, betas, sigma_hats, eps, a, loss, cfg, n=n)
        return f_eval(f, g_beta + c / math.sqrt(n))

    def __sklearn_is_fitted__(self):
        return hasattr(self, "report_")

    def summary(self) -> dict:
        check_is_fitted(self)
        return self.report_.to_dict()


class PluginEstimator(BaseEstimator):
    """``f(g(beta_tilde))`` with no bias adjustment."""

    def __init__(self, g=None, f=None):
        self.g = g
        self.f = f

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        est = EfficientEstimate.from_data(X)
        return self.fit_moments(est.beta_tilde, est.sigma_hat, est.n)

    def fit_moments(self, beta_tilde, sigma_hat=None, n=None):
        beta = as_finite_vector(beta_tilde, "beta_tilde")
        self.theta_ = float(self.estimate_many(beta[None, :], None, n)[0])
        self.n_features_in_ = beta.size
        return self

    def estimate_many(self, beta_tildes, sigma_hats, n) -> np.ndarray:
        betas = np.asarray(beta_tildes, dtype=float)
        g = _default_map(self.g, betas.shape[1])
        f = Transform.identity() if self.f is None else self.f
        return f_eval(f, g.evaluate(betas))


class FrozenMinimaxEstimator(MinimaxEstimator):
    """Fast approximation: ``c_hat`` computed once at a fixed ``(beta_ref, sigma_ref, n)``.

    Not the minimax estimator itself; intended for quick exploratory sweeps.
    """

    def __init__(self, beta_ref=None, sigma_ref=None, n_ref=None, g=None, f=None, loss=None, L=100_000,
                 M1=10.0, c_grid_size=401, grid_points=21, refine_rounds=5, max_incumbents=8, eta="auto",
                 eps_rule="n^-1/3", seed=0, threads=None):
        super().__init__(g=g, f=f, loss=loss, L=L, M1=M1, c_grid_size=c_grid_size, grid_points=grid_points,
                         refine_rounds=refine_rounds, max_incumbents=max_incumbents, eta=eta, eps_rule=eps_rule,
                         seed=seed, threads=threads)
        self.beta_ref = beta_ref
        self.sigma_ref = sigma_ref
        self.n_ref = n_ref

    def _frozen_c(self) -> float:
        if not hasattr(self, "frozen_c_"):
            est = EfficientEstimate(self.beta_ref, self.sigma_ref, self.n_ref)
            g, f, loss = self._parts(est.beta_tilde.size)
            self.frozen_c_ = estimate_from_moments(est, g, f, loss, self.risk_config(), self.eps_rule).c_hat
        return self.frozen_c_

    def estimate_many(self, beta_tildes, sigma_hats, n: int) -> np.ndarray:
        betas = np.asarray(beta_tildes, dtype=float)
        g, f, _ = self._parts(betas.shape[1])
        return f_eval(f, g.evaluate(betas) + self._frozen_c() / math.sqrt(n))
