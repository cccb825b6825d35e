"""Confidence intervals for the change point location.

The refitted estimate ``k_tilde`` satisfies, asymptotically,

    (k_tilde - k_star) / c  ->  argmax_r Z(r),
    c = sigma1_star^2 / (sigma1^4 * xi2^2),

where ``Z`` is a two-sided Brownian motion with drift:

    Z(r) = 2 W1(-r) + r                                  r < 0
    Z(r) = (2 sigma2_star / sigma1_star) W2(r)
           - (sigma2^2 / sigma1^2) r                     r > 0

Quantiles of the argmax are obtained by Monte Carlo on a regular grid and
turned into integer intervals for ``k_star``.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import GridTooSmallWarning, InsufficientHistory, InvalidParams, NoJump, TableIncomplete
from .tscore import ArModel, TimeSeries, as_array, residuals

__all__ = [
    "NuisanceEstimates",
    "MonteCarloSettings",
    "QuantileTable",
    "ConfidenceInterval",
    "DEFAULT_PROBS",
    "probs_for_levels",
    "nuisance_estimates",
    "simulate_argmax_quantiles",
    "confidence_interval",
    "worker_count",
]

SCHEMA_VERSION = 1

DEFAULT_PROBS = (0.005, 0.025, 0.05, 0.10, 0.15, 0.5, 0.85, 0.90, 0.95, 0.975, 0.995)

# paths per random substream
_BLOCK = 1000
# cache the positive-side walks only up to this many grid values (float32)
_ROUND_SLACK = 1e-6
_WALK_CACHE_LIMIT = 6 * 10**7


def worker_count(default: int = 1) -> int:
    """Worker cap from the ``CPD_THREADS`` environment variable."""
    try:
        n = int(os.environ.get("CPD_THREADS", default))
    except ValueError:
        return default
    return max(1, n)


@dataclass(frozen=True)
class NuisanceEstimates:
    xi2: float
    sigma1_sq: float
    sigma2_sq: float
    sigma1_star_sq: float
    sigma2_star_sq: float
    resid_var_pre: float
    resid_var_post: float

    @property
    def params(self) -> tuple[float, float, float, float]:
        """``(sigma1, sigma2, sigma1_star, sigma2_star)``."""
        return (
            math.sqrt(self.sigma1_sq),
            math.sqrt(self.sigma2_sq),
            math.sqrt(self.sigma1_star_sq),
            math.sqrt(self.sigma2_star_sq),
        )

    @property
    def scale(self) -> float:
        """Index units per unit of ``r``."""
        return self.sigma1_star_sq / (self.sigma1_sq**2 * self.xi2**2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scale"] = self.scale
        return d


def nuisance_estimates(
    x: TimeSeries | ArrayLike,
    k_tilde: int,
    model_pre: ArModel,
    model_post: ArModel,
    p_common: int | None = None,
    factorized: bool = False,
) -> NuisanceEstimates:
    """Plug-in estimates of the drift and diffusion parameters of ``Z``.

    With ``eta = phi_pre - phi_post`` and ``Z_t`` the vector of ``p`` lagged
    values, each segment contributes

    * ``sigma_j^2 = eta' S_j eta / |eta|^2`` with ``S_j`` the sample second
      moment matrix of ``Z_t``;
    * ``sigma_j_star^2 = mean(e_t^2 (eta' Z_t)^2) / |eta|^2`` using the
      segment residuals ``e_t``, or ``mean(e_t^2) * sigma_j^2`` when
      ``factorized`` is set.

    The pre-change segment uses ``t in [p, k_tilde)``, the post-change one
    ``t in [k_tilde, T)``.
    """
    arr = as_array(x)
    T = arr.size
    p = max(model_pre.p, model_post.p) if p_common is None else p_common
    m1, m2 = model_pre.padded(p), model_post.padded(p)
    if k_tilde - p < 2 or T - k_tilde < p + 2:
        raise InsufficientHistory(f"split {k_tilde} leaves a segment shorter than p + 2 = {p + 2}")
    eta = m1.phi - m2.phi
    xi2 = float(np.linalg.norm(eta))
    if not xi2 > 0:
        raise NoJump("pre- and post-change AR coefficients coincide; the interval is undefined")

    def segment(model, start, stop):
        Z = np.column_stack([arr[start - j : stop - j] for j in range(1, p + 1)])
        proj = Z @ eta
        e = residuals(arr, model, start, stop)
        s2 = float(proj @ proj) / proj.size / xi2**2
        rv = float(e @ e) / e.size
        if factorized:
            s2_star = rv * s2
        else:
            s2_star = float(np.mean(e**2 * proj**2)) / xi2**2
        return s2, s2_star, rv

    s1, s1_star, rv1 = segment(m1, p, k_tilde)
    s2, s2_star, rv2 = segment(m2, k_tilde, T)
    return NuisanceEstimates(xi2, s1, s2, s1_star, s2_star, rv1, rv2)


@dataclass(frozen=True)
class MonteCarloSettings:
    """Grid half-width ``R``, step ``delta``, path count ``M`` and seed."""

    R: float = 200.0
    delta: float = 0.05
    M: int = 50000
    seed: int = 0

    def validate(self):
        if not self.R > 0:
            raise InvalidParams(f"R must be positive, got {self.R}")
        if not 0 < self.delta <= self.R / 100:
            raise InvalidParams(f"delta must lie in (0, R/100], got {self.delta}")
        if self.M < 1000:
            raise InvalidParams(f"M must be at least 1000, got {self.M}")


@dataclass
class QuantileTable:
    params: tuple[float, float, float, float]
    probs: NDArray[np.float64]
    quants: NDArray[np.float64]
    mc: MonteCarloSettings
    truncation_fraction: float = 0.0
    truncation_warning: bool = False
    median: float = field(default=math.nan)

    @property
    def ratios(self) -> tuple[float, float]:
        """``(sigma2_star / sigma1_star, sigma2^2 / sigma1^2)``, all the law depends on."""
        s1, s2, s1s, s2s = self.params
        return s2s / s1s, (s2 / s1) ** 2

    def quantile(self, prob: float) -> float:
        hit = np.flatnonzero(np.isclose(self.probs, prob, rtol=0, atol=1e-9))
        if not hit.size:
            raise TableIncomplete(f"quantile table has no entry for probability {prob}")
        return float(self.quants[hit[0]])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "argmax_quantile_table",
            "params": {
                "sigma1": self.params[0],
                "sigma2": self.params[1],
                "sigma1_star": self.params[2],
                "sigma2_star": self.params[3],
            },
            "mc_settings": asdict(self.mc),
            "probs": [float(v) for v in self.probs],
            "quants": [float(v) for v in self.quants],
            "median": float(self.median),
            "truncation_fraction": float(self.truncation_fraction),
            "truncation_warning": bool(self.truncation_warning),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> QuantileTable:
        if d.get("schema_version") != SCHEMA_VERSION:
            raise InvalidParams(f"unsupported quantile table schema {d.get('schema_version')!r}")
        p = d["params"]
        return cls(
            params=(p["sigma1"], p["sigma2"], p["sigma1_star"], p["sigma2_star"]),
            probs=np.asarray(d["probs"], dtype=float),
            quants=np.asarray(d["quants"], dtype=float),
            mc=MonteCarloSettings(**d["mc_settings"]),
            truncation_fraction=d["truncation_fraction"],
            truncation_warning=d["truncation_warning"],
            median=d.get("median", math.nan),
        )

    @classmethod
    def from_json(cls, text: str) -> QuantileTable:
        return cls.from_dict(json.loads(text))


def probs_for_levels(levels, base=DEFAULT_PROBS) -> tuple[float, ...]:
    """Default probabilities plus both tail probabilities of every level."""
    extra = []
    for lv in levels:
        extra += [round((1 - lv) / 2, 12), round((1 + lv) / 2, 12)]
    return tuple(sorted(set(base) | set(extra)))


def _block_rng(seed, side, block):
    return np.random.default_rng(np.random.SeedSequence([seed, side, block]))


def _walk_block(n, delta, seed, side, block, size):
    """Standard Brownian motion on ``delta, 2 delta, ..., n delta`` for ``size`` paths."""
    z = _block_rng(seed, side, block).standard_normal((size, n))
    np.cumsum(z, axis=1, out=z)
    z *= math.sqrt(delta)
    return z.astype(np.float32)


def _blocks(M):
    return [(b, min(_BLOCK, M - b * _BLOCK)) for b in range(-(-M // _BLOCK))]


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


@lru_cache(maxsize=4)
def _negative_side(n, delta, M, seed, workers=1):
    """Max and argmax index of ``2 W(s) - s`` per path; parameter free."""
    drift = delta * np.arange(1, n + 1, dtype=np.float64)

    def run(blk):
        b, size = blk
        y = 2.0 * _walk_block(n, delta, seed, 0, b, size) - drift
        idx = np.argmax(y, axis=1)
        return y[np.arange(size), idx], idx + 1

    parts = _map(run, _blocks(M), workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


@lru_cache(maxsize=1)
def _cached_positive_walks(n, delta, M, seed, workers=1):
    return tuple(_map(lambda blk: _walk_block(n, delta, seed, 1, *blk), _blocks(M), workers))


def _positive_side(n, delta, M, seed, a, b, workers=1):
    drift = b * delta * np.arange(1, n + 1, dtype=np.float64)
    cached = _cached_positive_walks(n, delta, M, seed, workers) if n * M <= _WALK_CACHE_LIMIT else None

    def run(blk):
        bi, size = blk
        w = cached[bi] if cached is not None else _walk_block(n, delta, seed, 1, bi, size)
        y = (2.0 * a) * w - drift
        idx = np.argmax(y, axis=1)
        return y[np.arange(size), idx], idx + 1

    parts = _map(run, _blocks(M), workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def simulate_argmax_quantiles(
    params,
    R: float = 200.0,
    delta: float = 0.05,
    M: int = 50000,
    seed: int = 0,
    probs=None,
    workers: int | None = None,
) -> QuantileTable:
    """Monte Carlo quantiles of ``argmax_r Z(r)``.

    Paths live on ``{-R, ..., -delta, 0, delta, ..., R}``; Brownian motions
    are Gaussian random walks with step variance ``delta``. Ties go to the
    smallest ``|r|`` and then to the negative side. Paths whose argmax sits
    on ``+-R`` are counted as truncated; more than 1% triggers
    :class:`GridTooSmallWarning` and sets ``truncation_warning``.

    Random streams are derived from ``(seed, side, block of 1000 paths)``,
    so results do not depend on ``workers``.
    """
    mc = MonteCarloSettings(float(R), float(delta), int(M), int(seed))
    mc.validate()
    params = tuple(float(v) for v in params)
    if len(params) != 4 or not all(np.isfinite(v) and v > 0 for v in params):
        raise InvalidParams(f"need four positive finite parameters, got {params}")
    probs = np.asarray(DEFAULT_PROBS if probs is None else sorted(probs), dtype=float)
    if probs.size == 0 or np.any((probs <= 0) | (probs >= 1)):
        raise InvalidParams("probabilities must lie strictly inside (0, 1)")
    workers = worker_count() if workers is None else max(1, int(workers))

    s1, s2, s1s, s2s = params
    a, b = s2s / s1s, (s2 / s1) ** 2
    n = int(round(R / delta))
    neg_max, neg_idx = _negative_side(n, mc.delta, mc.M, mc.seed, workers)
    pos_max, pos_idx = _positive_side(n, mc.delta, mc.M, mc.seed, a, b, workers)

    r_neg = -neg_idx * mc.delta
    r_pos = pos_idx * mc.delta
    neg_wins = (neg_max > pos_max) | ((neg_max == pos_max) & (neg_idx <= pos_idx))
    best_val = np.where(neg_wins, neg_max, pos_max)
    r = np.where(neg_wins, r_neg, r_pos)
    r = np.where(best_val > 0, r, 0.0)
    truncated = (best_val > 0) & np.where(neg_wins, neg_idx == n, pos_idx == n)
    frac = float(truncated.mean())
    warn = frac > 0.01
    if warn:
        warnings.warn(
            f"{100 * frac:.2f}% of argmax locations hit the grid edge R={R}; increase R",
            GridTooSmallWarning,
            stacklevel=2,
        )
    quants = np.quantile(r, probs)
    return QuantileTable(
        params=params,
        probs=probs,
        quants=np.maximum.accumulate(quants),
        mc=mc,
        truncation_fraction=frac,
        truncation_warning=warn,
        median=float(np.median(r)),
    )


@dataclass(frozen=True)
class ConfidenceInterval:
    level: float
    lower: int
    upper: int
    scale_c: float

    @property
    def length(self) -> int:
        return self.upper - self.lower

    def contains(self, k: int) -> bool:
        return self.lower <= k <= self.upper

    def to_dict(self) -> dict:
        return asdict(self)


def confidence_interval(
    k_tilde: int, T: int, nuis: NuisanceEstimates, table: QuantileTable, level: float
) -> ConfidenceInterval:
    """Integer interval for the change index at nominal ``level``.

    ``[floor(k - c q_hi), ceil(k - c q_lo)]`` with ``q_hi``, ``q_lo`` the
    ``(1 +- level) / 2`` argmax quantiles, rounded outward, clipped to
    ``[1, T]`` and widened if needed so that it contains ``k_tilde``.
    """
    if not 0 < level < 1:
        raise InvalidParams(f"level must lie in (0, 1), got {level}")
    if not nuis.xi2 > 0:
        raise NoJump("zero jump size")
    a, b = table.ratios
    s1, s2, s1s, s2s = nuis.params
    if not (np.isclose(a, s2s / s1s, rtol=1e-9) and np.isclose(b, (s2 / s1) ** 2, rtol=1e-9)):
        raise InvalidParams("quantile table was built for different nuisance parameters")
    q_hi = table.quantile(round((1 + level) / 2, 12))
    q_lo = table.quantile(round((1 - level) / 2, 12))
    c = nuis.scale
    # offsets below _ROUND_SLACK index units are rounding noise, not width
    lower = math.floor(k_tilde - c * q_hi + _ROUND_SLACK)
    upper = math.ceil(k_tilde - c * q_lo - _ROUND_SLACK)
    lower = max(1, min(lower, k_tilde))
    upper = min(T, max(upper, k_tilde))
    return ConfidenceInterval(float(level), int(lower), int(upper), float(c))
