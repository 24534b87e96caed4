"""Command-line front-end.

Every subcommand reads one JSON config (``--config``), applies flag
overrides and writes its artifacts atomically.  Each JSON output carries the
resolved config and its SHA-256 hash, so feeding ``report["config"]`` back in
as ``--config`` reproduces the run.

Config keys::

    g            expression tree (see EquivariantMap.from_dict)
    f            transform descriptor            (default identity)
    loss         loss descriptor                 (default squared, truncated at M1)
    risk         RiskConfig fields: L, M1, c_grid_size, grid_points, refine_rounds,
                 eta, search, multistart, max_incumbents
    seed, eps_rule, beta0, sigma, n
    experiment   b_grid, reps, directions, estimator ("minimax" | "plugin" | "frozen"),
                 estimator_risk (RiskConfig overrides used per replication), perturbations
    path         origin, direction, t_grid ([start, stop, num] or explicit list)

Exit codes: 0 success, 2 config/input error, 3 numeric or resource error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import ENV_THREADS
from ._validation import InputError, ResourceError, as_finite_vector, as_psd_matrix
from .equivariant import EquivariantMap
from .estimator import (
    FrozenMinimaxEstimator,
    MinimaxEstimator,
    PluginEstimator,
    eps_from_rule,
    estimate_from_data,
)
from .experiments import (
    LocalRiskSpec,
    RobustSweepSpec,
    discontinuity_sweep,
    linear_path,
    robustified_risk,
    worst_case_risk,
)
from .risk import GaussianLimit, RiskConfig, oracle_curve
from .transform import Loss, Transform

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_RISK_KEYS = ("L", "M1", "c_grid_size", "grid_points", "refine_rounds", "eta", "search", "multistart",
              "max_incumbents")
_EXPERIMENT_DEFAULTS = {
    "b_grid": [0.0, 1.0, 2.0, 4.0],
    "reps": 1000,
    "directions": None,
    "estimator": "minimax",
    "estimator_risk": {"L": 400, "c_grid_size": 101, "grid_points": 21, "refine_rounds": 2,
                       "max_incumbents": 2},
    "perturbations": 4,
}


class ConfigError(InputError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


@contextmanager
def _key(name: str):
    """Re-raise parse failures with the offending config key in the message."""
    try:
        yield
    except ConfigError:
        raise
    except (InputError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"config key '{name}': {exc}") from exc


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return cfg


def read_data(path, has_header: bool) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"data file not found: {p}")
    try:
        X = np.loadtxt(p, delimiter=",", skiprows=1 if has_header else 0, ndmin=2, dtype=float)
    except ValueError as exc:
        raise ConfigError(f"data file {p} could not be parsed as numeric CSV: {exc}") from exc
    if not np.all(np.isfinite(X)):
        raise ConfigError(f"data file {p} contains non-finite entries")
    return X


class Problem:
    """Parsed and validated config; ``echo`` is the canonical resolved form."""

    def __init__(self, raw: dict, overrides: dict):
        raw = json.loads(json.dumps(raw))  # private deep copy
        risk_raw = dict(raw.get("risk") or {})
        for k in _RISK_KEYS:
            if overrides.get(k) is not None:
                risk_raw[k] = overrides[k]
        if overrides.get("seed") is not None:
            raw["seed"] = overrides["seed"]
        if overrides.get("eps_rule") is not None:
            raw["eps_rule"] = overrides["eps_rule"]
        unknown = set(risk_raw) - set(_RISK_KEYS)
        if unknown:
            raise ConfigError(f"config key 'risk': unknown fields {sorted(unknown)}")
        self.seed = int(raw.get("seed", 0))
        with _key("g"):
            if "g" not in raw:
                raise KeyError("missing (expression tree for g is required)")
            self.g = EquivariantMap.from_dict(raw["g"])
        with _key("f"):
            self.f = Transform.from_dict(raw["f"]) if raw.get("f") is not None else Transform.identity()
        with _key("risk"):
            self.cfg = RiskConfig(seed=self.seed, **risk_raw)
        with _key("loss"):
            self.loss = (Loss.from_dict(raw["loss"]) if raw.get("loss") is not None
                         else Loss.power(2.0, trunc=self.cfg.M1))
        self.eps_rule = raw.get("eps_rule", "n^-1/3")
        d = self.g.dim
        with _key("beta0"):
            self.beta0 = as_finite_vector(raw["beta0"], "beta0", d) if raw.get("beta0") is not None else None
        with _key("sigma"):
            self.sigma = as_psd_matrix(raw["sigma"]) if raw.get("sigma") is not None else np.eye(d)
            if self.sigma.shape != (d, d):
                raise InputError(f"must be {d}x{d}")
        with _key("n"):
            self.n = int(raw["n"]) if raw.get("n") is not None else None
        exp = dict(_EXPERIMENT_DEFAULTS)
        exp.update(raw.get("experiment") or {})
        if overrides.get("reps") is not None:
            exp["reps"] = overrides["reps"]
        self.experiment = exp
        self.path = raw.get("path")
        self.echo = {
            "g": self.g.to_dict(),
            "f": self.f.to_dict(),
            "loss": self.loss.to_dict(),
            "risk": {k: getattr(self.cfg, k) for k in _RISK_KEYS},
            "seed": self.seed,
            "eps_rule": self.eps_rule,
            "beta0": None if self.beta0 is None else self.beta0.tolist(),
            "sigma": self.sigma.tolist(),
            "n": self.n,
            "experiment": exp,
            "path": self.path,
        }

    @property
    def hash(self) -> str:
        return config_hash(self.echo)

    def need(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError(f"config key '{name}': required for this subcommand")

    def local_spec(self) -> LocalRiskSpec:
        self.need("beta0", "n")
        e = self.experiment
        with _key("experiment"):
            return LocalRiskSpec(self.beta0, self.sigma, tuple(e["b_grid"]), self.n, int(e["reps"]), self.g,
                                 self.f, self.loss, directions=e["directions"], seed=self.seed)

    def estimator(self):
        e = self.experiment
        with _key("experiment.estimator_risk"):
            er = dict(e.get("estimator_risk") or {})
            unknown = set(er) - set(_RISK_KEYS)
            if unknown:
                raise InputError(f"unknown fields {sorted(unknown)}")
            base = {k: getattr(self.cfg, k) for k in ("L", "M1", "c_grid_size", "grid_points", "refine_rounds",
                                                        "max_incumbents", "eta")}
            base.update({k: v for k, v in er.items() if k in base})
        kind = e["estimator"]
        common = dict(g=self.g, f=self.f, loss=self.loss, eps_rule=self.eps_rule,
                      seed=self.seed + 1, **base)
        if kind == "plugin":
            return PluginEstimator(g=self.g, f=self.f)
        if kind == "minimax":
            return MinimaxEstimator(**common)
        if kind == "frozen":
            return FrozenMinimaxEstimator(beta_ref=self.beta0, sigma_ref=self.sigma, n_ref=self.n, **common)
        raise ConfigError(f"config key 'experiment.estimator': unknown estimator {kind!r}")


def _write_pair(out: Path, csv_text: str, manifest: dict) -> Path:
    side = out.with_suffix(".json")
    atomic_write(out, csv_text)
    atomic_write(side, _dump(manifest))
    return side


def _manifest(prob: Problem, command: str, **results) -> dict:
    return {"command": command, "version": __version__, "config": prob.echo, "config_hash": prob.hash,
            **results}


def cmd_estimate(prob: Problem, args) -> str:
    if not args.data:
        raise ConfigError("estimate needs --data")
    X = read_data(args.data, args.has_header)
    if X.shape[1] != prob.g.dim:
        raise ConfigError(f"data file {args.data} has {X.shape[1]} columns but g has dimension {prob.g.dim}")
    report = estimate_from_data(X, prob.g, prob.f, prob.loss, prob.cfg, prob.eps_rule)
    out = _manifest(prob, "estimate", data=str(args.data), report=report.to_dict())
    text = _dump(out)
    if args.out:
        atomic_write(args.out, text)
        if args.curve_out:
            atomic_write(args.curve_out, report.risk_curve.csv_text())
    else:
        sys.stdout.write(text)
    return f"theta_mx={report.theta_mx:.10g} c_hat={report.c_hat:.6g} theta_plugin={report.theta_plugin:.10g}"


def cmd_risk_curve(prob: Problem, args) -> str:
    beta0 = prob.beta0 if prob.beta0 is not None else np.zeros(prob.g.dim)
    curve = oracle_curve(beta0, prob.g, prob.f, GaussianLimit(prob.sigma), prob.loss, prob.cfg)
    out = Path(args.out or "risk_curve.csv")
    side = _write_pair(out, curve.csv_text(), _manifest(prob, "risk-curve", summary=curve.sidecar()))
    return f"argmin_c={curve.argmin_c:.6g} B_min={curve.B_min:.6g} c_hat={curve.c_hat:.6g} -> {out} ({side.name})"


def cmd_worst_case(prob: Problem, args) -> str:
    spec = prob.local_spec()
    table = worst_case_risk(spec, prob.estimator())
    sups = {format(b, ".17g"): {"risk": r, "stderr": s} for b, (r, s) in table.sup_by_b().items()}
    lo, hi = table.sup_ci()
    out = Path(args.out or "worst_case.csv")
    _write_pair(out, table.csv_text(), _manifest(prob, "worst-case", sup_by_b=sups, sup_risk=table.sup_risk,
                                                 sup_stderr=table.sup_stderr, sup_ci95=[lo, hi]))
    return f"sup_risk={table.sup_risk:.6g} [{lo:.6g}, {hi:.6g}] -> {out}"


def cmd_robust_sweep(prob: Problem, args) -> str:
    spec = prob.local_spec()
    e = prob.experiment
    with _key("experiment.perturbations"):
        rs = RobustSweepSpec(spec, prob.eps_rule, e["perturbations"])
        rs.offsets()
    res = robustified_risk(rs, prob.estimator(), prob.cfg)
    out = Path(args.out or "robust_sweep.csv")
    _write_pair(out, res.csv_text(), _manifest(
        prob, "robust-sweep", eps_n=rs.eps_n, overall_sup=res.overall_sup, overall_stderr=res.overall_stderr,
        unperturbed_sup=res.tables[0].sup_risk, bound=res.bound, gap=res.gap))
    return f"overall_sup={res.overall_sup:.6g} bound={res.bound:.6g} gap={res.gap:.6g} -> {out}"


def _t_grid(spec) -> np.ndarray:
    if isinstance(spec, list) and len(spec) == 3 and isinstance(spec[2], int) and spec[2] >= 2:
        return np.linspace(float(spec[0]), float(spec[1]), spec[2])
    return as_finite_vector(spec, "t_grid")


def cmd_discontinuity(prob: Problem, args) -> str:
    if not isinstance(prob.path, dict):
        raise ConfigError("config key 'path': required object with origin, direction, t_grid")
    with _key("path"):
        d = prob.g.dim
        origin = as_finite_vector(prob.path.get("origin", [0.0] * d), "origin", d)
        direction = as_finite_vector(prob.path.get("direction", [1.0] * d), "direction", d)
        t = _t_grid(prob.path.get("t_grid", [-1.0, 1.0, 41]))
    res = discontinuity_sweep(linear_path(origin, direction), t, prob.f, prob.g, prob.loss, prob.cfg, prob.sigma)
    out = Path(args.out or "discontinuity.csv")
    _write_pair(out, res.csv_text(), _manifest(prob, "discontinuity", points=int(t.size)))
    return f"min_B range [{res.min_B.min():.6g}, {res.min_B.max():.6g}] over {t.size} points -> {out}"


COMMANDS = {
    "estimate": cmd_estimate,
    "risk-curve": cmd_risk_curve,
    "worst-case": cmd_worst_case,
    "robust-sweep": cmd_robust_sweep,
    "discontinuity": cmd_discontinuity,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nonreg-minimax",
                                     description="Local asymptotic minimax estimation of nondifferentiable parameters.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON problem config")
        p.add_argument("--out", help="output path (CSV for tables, JSON for estimate)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help=f"worker threads (fallback: ${ENV_THREADS}, then all cores)")
        p.add_argument("--L", type=int, dest="L")
        p.add_argument("--M1", type=float, dest="M1")
        p.add_argument("--c-grid-size", type=int, dest="c_grid_size")
        p.add_argument("--eta", type=float)
        p.add_argument("--eps-rule", dest="eps_rule")
        if name == "estimate":
            p.add_argument("--data", help="CSV of observations, one per row")
            p.add_argument("--has-header", action="store_true")
            p.add_argument("--curve-out", help="also write the selected risk curve as CSV")
        if name in ("worst-case", "robust-sweep"):
            p.add_argument("--reps", type=int)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    old_threads = os.environ.get(ENV_THREADS)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            os.environ[ENV_THREADS] = str(args.threads)
        overrides = {k: getattr(args, k, None) for k in _RISK_KEYS + ("seed", "eps_rule", "reps")}
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            prob = Problem(load_config(args.config), overrides)
            summary = COMMANDS[args.command](prob, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ResourceError, FloatingPointError, np.linalg.LinAlgError, MemoryError, OverflowError) as exc:
        print(f"numeric/resource error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        if args.threads is not None:
            if old_threads is None:
                os.environ.pop(ENV_THREADS, None)
            else:
                os.environ[ENV_THREADS] = old_threads
    print(summary)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
