"""Simulation scenarios and the replication harness.

Five two-regime designs, each a pre-change and a post-change process driven
by Gaussian noise:

====  ==================  ============================
id    before              after
====  ==================  ============================
I     MA(1), theta        x_t = phi |x_{t-1}| + e_t
II    MA(1), theta        AR(1), phi
III   AR(3)               AR(1), phi
IV    MA(1), theta        AR(3)
V     AR(3)               x_t = phi |x_{t-1}| + e_t
====  ==================  ============================

with AR(3) coefficients ``(0.9, -0.5, 0.3)``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .detection import DetectionConfig, DetectionResult, detect, prepare_series
from .errors import CPDError, InvalidSpec
from .inference import (
    MonteCarloSettings,
    confidence_interval,
    nuisance_estimates,
    probs_for_levels,
    simulate_argmax_quantiles,
    worker_count,
)
from .tscore import ArModel, TimeSeries, ar_spectral_density, sample_autocovariance, yule_walker

logger = logging.getLogger(__name__)

__all__ = [
    "AR3",
    "ScenarioSpec",
    "ReplicationReport",
    "generate_scenario",
    "run_replications",
    "true_spectral_curves",
    "scenario_preset",
]

AR3 = (0.9, -0.5, 0.3)

# (pre, post) process kinds
_DESIGNS = {
    "I": ("ma1", "abs"),
    "II": ("ma1", "ar1"),
    "III": ("ar3", "ar1"),
    "IV": ("ma1", "ar3"),
    "V": ("ar3", "abs"),
}
_NEEDS = {"I": ("theta", "phi"), "II": ("theta", "phi"), "III": ("phi",), "IV": ("theta",), "V": ("phi",)}


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    T: int
    k_star: int
    theta: float | None = None
    phi: float | None = None
    sigma: float = 1.0
    burn_in: int = 500
    splice: str = "continuous"

    def __post_init__(self):
        sid = str(self.id).upper()
        object.__setattr__(self, "id", sid)
        if sid not in _DESIGNS:
            raise InvalidSpec(f"unknown scenario {self.id!r}; expected one of {sorted(_DESIGNS)}")
        for name in _NEEDS[sid]:
            if getattr(self, name) is None:
                raise InvalidSpec(f"scenario {sid} requires {name}")
        if not self.sigma > 0:
            raise InvalidSpec(f"sigma must be positive, got {self.sigma}")
        if self.burn_in < 0:
            raise InvalidSpec("burn_in must be non-negative")
        if self.k_star < 20 or self.T - self.k_star < 20:
            raise InvalidSpec(f"k_star={self.k_star} must leave at least 20 points on each side of T={self.T}")
        if self.splice not in ("continuous", "restart"):
            raise InvalidSpec(f"splice must be 'continuous' or 'restart', got {self.splice!r}")

    @property
    def processes(self) -> tuple[str, str]:
        return _DESIGNS[self.id]

    def label(self) -> str:
        parts = [f"scenario {self.id}"]
        if self.theta is not None and "theta" in _NEEDS[self.id]:
            parts.append(f"theta={self.theta:g}")
        if self.phi is not None and "phi" in _NEEDS[self.id]:
            parts.append(f"phi={self.phi:g}")
        parts.append(f"T={self.T} k*={self.k_star} sigma={self.sigma:g}")
        return ", ".join(parts)


def scenario_preset(sid: str, T: int = 500, fraction: str = "1/2", **kwargs) -> ScenarioSpec:
    """Spec with ``k_star = floor(T * fraction)``; fraction given as ``"a/b"``."""
    num, _, den = fraction.partition("/")
    k_star = (T * int(num)) // int(den or 1)
    return ScenarioSpec(id=sid, T=T, k_star=k_star, **kwargs)


def _recurse(kind, param, eps, hist):
    """Run an autoregressive-type recursion forward from history ``hist``."""
    n = eps.size
    buf = np.concatenate([hist, np.zeros(n)])
    h = hist.size
    if kind == "ar1":
        for i in range(n):
            buf[h + i] = param * buf[h + i - 1] + eps[i]
    elif kind == "abs":
        for i in range(n):
            buf[h + i] = param * abs(buf[h + i - 1]) + eps[i]
    elif kind == "ar3":
        a1, a2, a3 = AR3
        for i in range(n):
            t = h + i
            buf[t] = a1 * buf[t - 1] + a2 * buf[t - 2] + a3 * buf[t - 3] + eps[i]
    else:
        raise InvalidSpec(f"not a recursive process: {kind}")
    return buf[h:]


def _simulate(kind, param, eps, hist=None):
    """Generate ``len(eps)`` values (``len(eps) - 1`` for MA(1), which consumes one lag)."""
    if kind == "ma1":
        return eps[1:] + param * eps[:-1]
    if hist is None:
        hist = np.zeros(3)
    return _recurse(kind, param, eps, np.asarray(hist, dtype=float))


def _param(spec, kind):
    if kind == "ma1":
        return spec.theta
    if kind == "ar3":
        return None
    return spec.phi


def generate_scenario(spec: ScenarioSpec, seed: int) -> TimeSeries:
    """Draw one series of length ``T`` with the regime switch after ``k_star`` points.

    By default the post-change recursion starts from the last pre-change
    values. ``splice="restart"`` instead runs the post-change process from
    zero through its own burn-in. An MA(1) post-change process always uses
    fresh noise.
    """
    rng = np.random.default_rng(seed)
    pre_kind, post_kind = spec.processes
    n_pre, n_post = spec.k_star, spec.T - spec.k_star
    eps_pre = rng.standard_normal(spec.burn_in + n_pre + 1) * spec.sigma
    eps_post = rng.standard_normal(n_post + 1) * spec.sigma
    pre = _simulate(pre_kind, _param(spec, pre_kind), eps_pre if pre_kind == "ma1" else eps_pre[1:])
    pre = pre[spec.burn_in :]
    post_param = _param(spec, post_kind)
    if post_kind == "ma1":
        post = _simulate(post_kind, post_param, eps_post)
    elif spec.splice == "continuous":
        post = _simulate(post_kind, post_param, eps_post[1:], hist=pre[-3:])
    else:
        eps_burn = rng.standard_normal(spec.burn_in) * spec.sigma
        warm = _simulate(post_kind, post_param, np.concatenate([eps_burn, eps_post[1:]]))
        post = warm[spec.burn_in :]
    return TimeSeries(np.concatenate([pre, post]))


@lru_cache(maxsize=16)
def _sieve_model(phi, sigma, order=30, n=100_000, seed=20240101):
    eps = np.random.default_rng(seed).standard_normal(n + 1000) * sigma
    path = _simulate("abs", phi, eps)[1000:]
    return yule_walker(sample_autocovariance(path, order), order)


def _population_spectrum(kind, param, sigma, lambdas):
    lam = np.asarray(lambdas, dtype=float)
    if kind == "ma1":
        return sigma**2 * (1 + param**2 + 2 * param * np.cos(lam)) / (2 * np.pi)
    if kind == "ar1":
        return ar_spectral_density(ArModel([param], sigma**2), lam)
    if kind == "ar3":
        return ar_spectral_density(ArModel(AR3, sigma**2), lam)
    # no closed form for the absolute-value recursion: AR(30) sieve fit on a long path
    return ar_spectral_density(_sieve_model(float(param), float(sigma)), lam)


def true_spectral_curves(spec: ScenarioSpec, lambdas):
    """Population spectral densities ``(f_pre, f_post)`` of the two regimes."""
    pre_kind, post_kind = spec.processes
    f_pre = _population_spectrum(pre_kind, _param(spec, pre_kind), spec.sigma, lambdas)
    f_post = _population_spectrum(post_kind, _param(spec, post_kind), spec.sigma, lambdas)
    return f_pre, f_post


@dataclass
class ReplicationReport:
    """Aggregate localisation and coverage metrics over replicates."""

    truth: int
    reps: int
    ab_hat: float
    ab_tilde: float
    rmse_hat: float
    rmse_tilde: float
    coverage: dict[float, float]
    ci_mean_length: dict[float, float]
    failures: int = 0
    failure_reasons: list[str] = field(default_factory=list)
    k_hat: list[int] = field(default_factory=list)
    k_tilde: list[int] = field(default_factory=list)
    truncation_max: float = 0.0
    label: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coverage"] = {str(k): v for k, v in self.coverage.items()}
        d["ci_mean_length"] = {str(k): v for k, v in self.ci_mean_length.items()}
        d["schema_version"] = 1
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def table_row(self) -> dict[str, str]:
        row = {
            "Truth": str(self.truth),
            "AB(k_hat)": f"{self.ab_hat:.3f}",
            "AB(k_tilde)": f"{self.ab_tilde:.3f}",
            "RMSE(k_hat)": f"{self.rmse_hat:.3f}",
            "RMSE(k_tilde)": f"{self.rmse_tilde:.3f}",
        }
        for lv, cov in sorted(self.coverage.items()):
            row[f"CP{round(100 * lv):d}"] = f"{cov:.3f}"
        return row

    def to_csv(self) -> str:
        row = self.table_row()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


def _one_replicate(args):
    spec, config, levels, seed, mc, factorized, detector = args
    x = generate_scenario(spec, seed)
    try:
        res = detector(x, config)
        arr = prepare_series(x, config)
        nuis = nuisance_estimates(arr, res.k_tilde, res.model_pre, res.model_post, res.p_common, factorized)
        table = simulate_argmax_quantiles(
            nuis.params, mc.R, mc.delta, mc.M, mc.seed, probs=probs_for_levels(levels), workers=1
        )
        cis = [confidence_interval(res.k_tilde, x.T, nuis, table, lv) for lv in levels]
    except CPDError as exc:
        return None, f"seed {seed}: {type(exc).__name__}: {exc}"
    return (res.k_hat, res.k_tilde, [(ci.contains(spec.k_star), ci.length) for ci in cis], table.truncation_fraction), None


def run_replications(
    spec: ScenarioSpec,
    config: DetectionConfig = DetectionConfig(),
    levels=(0.90, 0.95, 0.99),
    reps: int = 100,
    seed: int = 0,
    mc: MonteCarloSettings = MonteCarloSettings(),
    factorized: bool = False,
    detector: Callable[[TimeSeries, DetectionConfig], DetectionResult] = detect,
    workers: int | None = None,
) -> ReplicationReport:
    """Simulate ``reps`` series (seeds ``seed + r``), detect, and aggregate.

    Replicates that raise a package error are counted in ``failures`` and
    left out of every aggregate.
    """
    if reps < 1:
        raise InvalidSpec("reps must be >= 1")
    mc.validate()
    levels = tuple(float(lv) for lv in levels)
    workers = worker_count() if workers is None else max(1, workers)
    jobs = [(spec, config, levels, seed + r, mc, factorized, detector) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one_replicate, jobs))
    else:
        results = [_one_replicate(j) for j in jobs]

    ok = [r for r, _ in results if r is not None]
    reasons = [msg for _, msg in results if msg is not None]
    for msg in reasons:
        logger.warning("replicate failed: %s", msg)
    if ok:
        k_hat = np.array([r[0] for r in ok])
        k_tilde = np.array([r[1] for r in ok])
        e_hat, e_tilde = k_hat - spec.k_star, k_tilde - spec.k_star
        ab_hat, ab_tilde = float(np.mean(np.abs(e_hat))), float(np.mean(np.abs(e_tilde)))
        rmse_hat, rmse_tilde = float(np.sqrt(np.mean(e_hat**2.0))), float(np.sqrt(np.mean(e_tilde**2.0)))
        coverage = {lv: float(np.mean([r[2][i][0] for r in ok])) for i, lv in enumerate(levels)}
        lengths = {lv: float(np.mean([r[2][i][1] for r in ok])) for i, lv in enumerate(levels)}
        trunc = float(max(r[3] for r in ok))
    else:
        k_hat = k_tilde = np.array([], dtype=int)
        ab_hat = ab_tilde = rmse_hat = rmse_tilde = float("nan")
        coverage = {lv: float("nan") for lv in levels}
        lengths = {lv: float("nan") for lv in levels}
        trunc = float("nan")
    return ReplicationReport(
        truth=spec.k_star,
        reps=len(ok),
        ab_hat=ab_hat,
        ab_tilde=ab_tilde,
        rmse_hat=rmse_hat,
        rmse_tilde=rmse_tilde,
        coverage=coverage,
        ci_mean_length=lengths,
        failures=len(reasons),
        failure_reasons=reasons,
        k_hat=[int(k) for k in k_hat],
        k_tilde=[int(k) for k in k_tilde],
        truncation_max=trunc,
        label=spec.label(),
    )
