"""Single change point detection in the autocorrelation structure.

Two estimators are provided:

* the near-optimal sweep: for every candidate split ``k`` both segments are
  refit by Yule-Walker and the two-segment residual sum of squares
  ``L(k)`` is minimised;
* the refitted estimator: coefficients are frozen at the fits around the
  sweep estimate and the squared loss ``Q(k)`` is minimised once more.

Split indices count observations in the pre-change segment, so a split
``k`` means ``x[:k]`` is "before" and ``x[k:]`` is "after".
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateSegment, DegenerateSeries, InvalidInput, SeriesTooShort, SingularSystem
from .tscore import (
    ArModel,
    TimeSeries,
    as_array,
    default_max_lag,
    levinson_durbin,
    residuals,
    sample_autocovariance,
    select_lag_aic,
    yule_walker,
)

__all__ = [
    "DetectionConfig",
    "DetectionResult",
    "prepare_series",
    "stage1_loss",
    "stage1_loss_curve",
    "near_optimal_estimate",
    "refit_models",
    "stage2_loss_curve",
    "optimal_estimate",
    "detect",
]


@dataclass(frozen=True)
class DetectionConfig:
    """Settings for :func:`detect`.

    Parameters
    ----------
    lag_mode : {"aic", "fixed"}
        ``"fixed"`` uses ``lag`` as the AR order everywhere. ``"aic"`` uses
        ``lag`` as the order cap (``None`` picks a default from the series
        length) and selects orders by AIC.
    lag : int, optional
    min_segment : int, optional
        Smallest admissible segment length for the sweep. Defaults to
        ``max(2 * p_max, 20)``.
    sweep_stride : int
        Candidate spacing of the sweep. Values above 1 run a coarse pass
        followed by a stride-1 pass within ``2 * sweep_stride`` of the
        coarse minimum.
    demean : bool
        Subtract the global mean before anything else.
    refit_lags : bool
        Re-select AIC orders on the two segments at the sweep estimate.
    """

    lag_mode: str = "aic"
    lag: int | None = None
    min_segment: int | None = None
    sweep_stride: int = 1
    demean: bool = False
    refit_lags: bool = True

    def __post_init__(self):
        if self.lag_mode not in ("aic", "fixed"):
            raise InvalidInput(f"lag_mode must be 'aic' or 'fixed', got {self.lag_mode!r}")
        if self.lag_mode == "fixed" and self.lag is None:
            raise InvalidInput("fixed lag mode needs an explicit lag")
        if self.lag is not None and self.lag < 0:
            raise InvalidInput(f"lag must be non-negative, got {self.lag}")
        if self.sweep_stride < 1:
            raise InvalidInput(f"sweep_stride must be >= 1, got {self.sweep_stride}")
        if self.min_segment is not None and self.min_segment < 10:
            raise InvalidInput(f"min_segment must be >= 10, got {self.min_segment}")

    @classmethod
    def from_lag_string(cls, spec: str, **kwargs) -> DetectionConfig:
        """Build from ``"aic"``, ``"aic:PMAX"`` or ``"fixed:P"``."""
        mode, _, arg = spec.strip().partition(":")
        try:
            lag = int(arg) if arg else None
        except ValueError:
            raise InvalidInput(f"bad lag specification {spec!r}") from None
        return cls(lag_mode=mode.lower(), lag=lag, **kwargs)

    def p_max(self, T: int) -> int:
        if self.lag is not None:
            return self.lag
        return default_max_lag(T // 2)

    def resolved_min_segment(self, T: int) -> int:
        if self.min_segment is not None:
            return self.min_segment
        return max(2 * self.p_max(T), 20)


@dataclass
class DetectionResult:
    T: int
    k_hat: int
    lags_stage1: tuple[int, int]
    min_segment: int
    loss_curve_stage1: tuple[NDArray[np.int64], NDArray[np.float64]]
    k_tilde: int | None = None
    model_pre: ArModel | None = None
    model_post: ArModel | None = None
    p_common: int | None = None
    loss_curve_stage2: tuple[NDArray[np.int64], NDArray[np.float64]] | None = None
    demeaned: bool = False

    def to_dict(self, curves: bool = True) -> dict:
        out = {
            "T": self.T,
            "k_hat": self.k_hat,
            "k_tilde": self.k_tilde,
            "lags_stage1": list(self.lags_stage1),
            "p_common": self.p_common,
            "min_segment": self.min_segment,
            "demeaned": self.demeaned,
            "model_pre": self.model_pre.to_dict() if self.model_pre else None,
            "model_post": self.model_post.to_dict() if self.model_post else None,
        }
        if curves:
            out["loss_curve_stage1"] = _curve_dict(self.loss_curve_stage1)
            out["loss_curve_stage2"] = _curve_dict(self.loss_curve_stage2)
        return out


def _curve_dict(curve):
    if curve is None:
        return None
    ks, vals = curve
    return {"k": [int(k) for k in ks], "loss": [float(v) for v in vals]}


def prepare_series(x: TimeSeries | ArrayLike, config: DetectionConfig) -> NDArray[np.float64]:
    """Values the estimators operate on (globally demeaned if requested)."""
    if isinstance(x, TimeSeries):
        if config.demean and not x.demeaned:
            return x.demean().values
        return x.values
    arr = as_array(x)
    return arr - arr.mean() if config.demean else arr


def _stage1_setup(arr, config: DetectionConfig):
    """Resolve (p_pre, p_post, min_segment) for the sweep."""
    T = arr.size
    ms = config.resolved_min_segment(T)
    if T < 2 * ms:
        raise SeriesTooShort(f"series of length {T} is shorter than 2 * min_segment = {2 * ms}")
    if config.lag_mode == "fixed":
        p1 = p2 = config.lag
    else:
        p_max = config.p_max(T)
        half = T // 2
        if min(half, T - half) < p_max + 2:
            raise SeriesTooShort(f"series of length {T} too short for AIC order cap {p_max}")
        p1 = select_lag_aic(arr[:half], p_max)
        p2 = select_lag_aic(arr[half:], p_max)
    if ms < max(p1, p2) + 2:
        raise InvalidInput(f"min_segment {ms} too small for AR orders ({p1}, {p2})")
    return p1, p2, ms


def _fit(segment, p):
    acv = sample_autocovariance(segment, p)
    if not acv.gamma[0] > 0:
        raise DegenerateSegment(f"segment of length {segment.size} is constant")
    try:
        return yule_walker(acv, p)
    except (DegenerateSeries, SingularSystem) as exc:
        raise DegenerateSegment(str(exc)) from exc


def _stage1_direct(arr, k, p1, p2):
    T = arr.size
    m1 = _fit(arr[:k], p1)
    m2 = _fit(arr[k:], p2)
    r1 = residuals(arr, m1, p1, k)
    r2 = residuals(arr, m2, k + p2, T)
    return float(r1 @ r1 + r2 @ r2), m1, m2


def stage1_loss(x: TimeSeries | ArrayLike, k: int, config: DetectionConfig):
    """Two-segment residual sum of squares at split ``k``.

    Each segment gets its own Yule-Walker fit; residual sums start ``p``
    observations into each segment so no pre-change value is used as a
    regressor for a post-change residual.

    Returns
    -------
    loss : float
    model_pre, model_post : ArModel
    """
    arr = prepare_series(x, config)
    p1, p2, ms = _stage1_setup(arr, config)
    if not ms <= k <= arr.size - ms:
        raise InvalidInput(f"split {k} outside admissible range [{ms}, {arr.size - ms}]")
    return _stage1_direct(arr, k, p1, p2)


class _PrefixStats:
    """Prefix sums of ``x[t]`` and ``x[t] * x[t + d]`` for ``d <= max_lag``."""

    def __init__(self, arr, max_lag):
        self.T = arr.size
        self.S = np.concatenate([[0.0], np.cumsum(arr)])
        self.P = [np.concatenate([[0.0], np.cumsum(arr[: self.T - d] * arr[d:])]) for d in range(max_lag + 1)]

    def cross(self, d, a, c):
        # sum_{t=a}^{c-1} x[t] x[t+d]
        return self.P[d][c] - self.P[d][a]

    def autocov(self, a, b, p):
        """Segment autocovariances for segments ``[a, b)``; a, b are arrays."""
        S = self.S
        n = (b - a).astype(float)
        m = (S[b] - S[a]) / n
        out = np.empty((a.size, p + 1))
        for j in range(p + 1):
            lead = S[b - j] - S[a]
            lag = S[b] - S[a + j]
            out[:, j] = (self.cross(j, a, b - j) - m * (lead + lag) + (n - j) * m * m) / n
        return out

    def sse(self, phi, a0, b):
        """Sum over t in [a0, b) of (x[t] - phi @ (x[t-1..t-p]))^2."""
        p = phi.shape[1]
        c = np.concatenate([np.ones((phi.shape[0], 1)), -phi], axis=1)
        total = np.zeros(a0.size)
        for i in range(p + 1):
            for l in range(i, p + 1):
                g = self.cross(l - i, a0 - l, b - l)
                w = c[:, i] * c[:, l]
                total += w * g if i == l else 2.0 * w * g
        return total


def _batch_fit(stats, a, b, p):
    gam = stats.autocov(a, b, p)
    phi, sig, _ = levinson_durbin(gam)
    ok = np.isfinite(sig[:, -1])
    return phi, ok


def stage1_loss_curve(arr, ks, p1, p2, stats=None):
    """Loss ``L(k)`` for every split in ``ks`` from prefix statistics.

    Candidates whose segments cannot be fitted get ``inf``.
    """
    T = arr.size
    ks = np.asarray(ks, dtype=np.int64)
    if stats is None:
        stats = _PrefixStats(arr, max(p1, p2))
    zeros = np.zeros_like(ks)
    full = np.full_like(ks, T)
    phi1, ok1 = _batch_fit(stats, zeros, ks, p1)
    phi2, ok2 = _batch_fit(stats, ks, full, p2)
    loss = stats.sse(np.nan_to_num(phi1), zeros + p1, ks) + stats.sse(np.nan_to_num(phi2), ks + p2, full)
    return np.where(ok1 & ok2, loss, np.inf)


def near_optimal_estimate(x: TimeSeries | ArrayLike, config: DetectionConfig = DetectionConfig()) -> DetectionResult:
    """Sweep estimate: argmin of ``L(k)`` over admissible splits.

    Ties go to the smallest split.
    """
    arr = prepare_series(x, config)
    T = arr.size
    p1, p2, ms = _stage1_setup(arr, config)
    stats = _PrefixStats(arr, max(p1, p2))
    lo, hi = ms, T - ms
    s = config.sweep_stride
    ks = np.arange(lo, hi + 1, s)
    loss = stage1_loss_curve(arr, ks, p1, p2, stats)
    if s > 1 and np.isfinite(loss).any():
        k0 = int(ks[np.argmin(loss)])
        fine = np.arange(max(lo, k0 - 2 * s), min(hi, k0 + 2 * s) + 1)
        fine = np.setdiff1d(fine, ks)
        if fine.size:
            ks = np.concatenate([ks, fine])
            loss = np.concatenate([loss, stage1_loss_curve(arr, fine, p1, p2, stats)])
            order = np.argsort(ks, kind="stable")
            ks, loss = ks[order], loss[order]
    if not np.isfinite(loss).any():
        raise DegenerateSegment("no admissible split yields fittable segments")
    k_hat = int(ks[np.argmin(loss)])
    return DetectionResult(
        T=T,
        k_hat=k_hat,
        lags_stage1=(p1, p2),
        min_segment=ms,
        loss_curve_stage1=(ks, loss),
        demeaned=bool(config.demean or (isinstance(x, TimeSeries) and x.demeaned)),
    )


def refit_models(x: TimeSeries | ArrayLike, k: int, config: DetectionConfig = DetectionConfig(), lags=None):
    """Fit both segments at split ``k`` and pad to a common order.

    ``lags`` fixes the two orders; otherwise they come from ``config``
    (AIC on each segment when ``refit_lags`` is set).

    Returns
    -------
    model_pre, model_post : ArModel
        Coefficient vectors zero-padded to ``p_common``.
    p_common : int
    """
    arr = prepare_series(x, config)
    T = arr.size
    if not 0 < k < T:
        raise InvalidInput(f"split {k} outside (0, {T})")
    if lags is not None:
        p1, p2 = lags
    elif config.lag_mode == "fixed":
        p1 = p2 = config.lag
    elif config.refit_lags:
        p_max = config.p_max(T)
        p1 = select_lag_aic(arr[:k], min(p_max, k - 2))
        p2 = select_lag_aic(arr[k:], min(p_max, T - k - 2))
    else:
        p1, p2, _ = _stage1_setup(arr, config)
    m1 = _fit(arr[:k], p1)
    m2 = _fit(arr[k:], p2)
    p = max(p1, p2)
    return m1.padded(p), m2.padded(p), p


def stage2_loss_curve(x: TimeSeries | ArrayLike, model_pre: ArModel, model_post: ArModel, p_common: int | None = None):
    """Squared loss ``Q(k)`` with frozen coefficients for ``k = p+1 .. T-1``.

    Returns
    -------
    ks : ndarray of int
    Q : ndarray
    """
    arr = as_array(x)
    p = max(model_pre.p, model_post.p) if p_common is None else p_common
    m1, m2 = model_pre.padded(p), model_post.padded(p)
    T = arr.size
    if T < p + 2:
        raise SeriesTooShort(f"series of length {T} too short for order {p}")
    r1 = residuals(arr, m1, p, T) ** 2
    r2 = residuals(arr, m2, p, T) ** 2
    # split k keeps t = p .. k-1 before, t = k .. T-1 after
    ks = np.arange(p + 1, T)
    pre = np.cumsum(r1)[: ks.size]
    post = np.cumsum(r2[::-1])[::-1][1 : ks.size + 1]
    return ks, (pre + post) / (T - p + 1)


def optimal_estimate(x: TimeSeries | ArrayLike, model_pre: ArModel, model_post: ArModel, p_common: int | None = None) -> int:
    """Refitted estimate: argmin of ``Q(k)``; ties go to the smallest split."""
    ks, q = stage2_loss_curve(x, model_pre, model_post, p_common)
    return int(ks[np.argmin(q)])


def detect(x: TimeSeries | ArrayLike, config: DetectionConfig = DetectionConfig()) -> DetectionResult:
    """Sweep estimate, refit at it, then the refitted least squares estimate."""
    arr = prepare_series(x, config)
    res = near_optimal_estimate(arr, replace(config, demean=False))
    m1, m2, p = refit_models(arr, res.k_hat, replace(config, demean=False))
    ks, q = stage2_loss_curve(arr, m1, m2, p)
    res.k_tilde = int(ks[np.argmin(q)])
    res.model_pre, res.model_post, res.p_common = m1, m2, p
    res.loss_curve_stage2 = (ks, q)
    res.demeaned = bool(config.demean or (isinstance(x, TimeSeries) and x.demeaned))
    return res
