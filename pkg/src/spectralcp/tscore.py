"""Autocovariances, Yule-Walker AR fitting and AR spectral densities.

Conventions
-----------
Series are 0-based numpy arrays. An AR(p) model ``phi`` predicts
``x[t]`` from ``(x[t-1], ..., x[t-p])``; ``phi[0]`` is the lag-1
coefficient. Index ranges are half-open ``[start, stop)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    DegenerateSeries,
    InsufficientHistory,
    InvalidInput,
    OrderTooLarge,
    SingularSystem,
    SpectralPole,
)

logger = logging.getLogger(__name__)

__all__ = [
    "TimeSeries",
    "AutocovarianceVector",
    "ArModel",
    "as_array",
    "sample_autocovariance",
    "levinson_durbin",
    "yule_walker",
    "select_lag_aic",
    "default_max_lag",
    "ar_spectral_density",
    "residuals",
]


@dataclass(frozen=True)
class TimeSeries:
    """Ordered finite observations.

    ``demeaned`` records whether the global mean has been removed.
    """

    values: NDArray[np.float64]
    demeaned: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).ravel()
        if v.size < 1:
            raise InvalidInput("time series must contain at least one value")
        if not np.all(np.isfinite(v)):
            raise InvalidInput("time series contains NaN or Inf")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @property
    def T(self) -> int:
        return self.values.size

    def demean(self) -> TimeSeries:
        if self.demeaned:
            return self
        return TimeSeries(self.values - self.values.mean(), demeaned=True)

    def scaled(self, c: float) -> TimeSeries:
        return TimeSeries(self.values * c, demeaned=self.demeaned)

    def reversed(self) -> TimeSeries:
        return TimeSeries(self.values[::-1], demeaned=self.demeaned)


def as_array(x: TimeSeries | ArrayLike) -> NDArray[np.float64]:
    """Return the float values of ``x``, validating finiteness."""
    if isinstance(x, TimeSeries):
        return x.values
    arr = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("series contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class AutocovarianceVector:
    gamma: NDArray[np.float64]
    segment_len: int

    @property
    def max_lag(self) -> int:
        return self.gamma.size - 1


@dataclass(frozen=True)
class ArModel:
    """Fitted AR(p) model.

    Attributes
    ----------
    phi : ndarray, shape (p,)
        Coefficients ordered by ascending lag.
    sigma2 : float
        Innovation variance.
    reflection : ndarray, shape (p,)
        Partial autocorrelations from the Levinson-Durbin recursion, empty
        when the model was not produced by it.
    """

    phi: NDArray[np.float64]
    sigma2: float
    reflection: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float, copy=True).ravel()
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        if not self.sigma2 >= 0:
            raise InvalidInput(f"sigma2 must be non-negative, got {self.sigma2}")

    @property
    def p(self) -> int:
        return self.phi.size

    def padded(self, p: int) -> ArModel:
        """Return the same model with ``phi`` zero-padded to length ``p``."""
        if p < self.p:
            raise ValueError(f"cannot pad order {self.p} model down to {p}")
        if p == self.p:
            return self
        phi = np.concatenate([self.phi, np.zeros(p - self.p)])
        return ArModel(phi, self.sigma2, self.reflection)

    def to_dict(self) -> dict:
        return {"p": self.p, "phi": self.phi.tolist(), "sigma2": float(self.sigma2)}


def sample_autocovariance(x: TimeSeries | ArrayLike, max_lag: int) -> AutocovarianceVector:
    """Biased sample autocovariances at lags ``0..max_lag``.

    Each lag is normalised by the full segment length, which keeps the
    implied Toeplitz matrix positive semi-definite. The segment is demeaned
    with its own mean.
    """
    arr = as_array(x)
    n = arr.size
    if max_lag < 0:
        raise OrderTooLarge(f"max_lag must be non-negative, got {max_lag}")
    if n < max_lag + 2:
        raise OrderTooLarge(
            f"segment of length {n} is too short for lag {max_lag} (need {max_lag + 2})"
        )
    d = arr - arr.mean()
    gamma = np.array([d[: n - k] @ d[k:] for k in range(max_lag + 1)]) / n
    return AutocovarianceVector(gamma, n)


def levinson_durbin(gamma: ArrayLike):
    """Batched Levinson-Durbin recursion.

    Parameters
    ----------
    gamma : array_like, shape (..., p + 1)
        Autocovariances at lags ``0..p`` along the last axis.

    Returns
    -------
    phi : ndarray, shape (..., p)
        Order-p coefficients.
    sigma2 : ndarray, shape (..., p + 1)
        Prediction error variance at every order ``0..p``.
    reflection : ndarray, shape (..., p)
        Reflection coefficients.

    Entries whose recursion breaks down (``gamma[0] <= 0`` or a reflection
    coefficient of modulus >= 1) come back as NaN from that order on; callers
    decide how to report them.
    """
    g = np.asarray(gamma, dtype=float)
    p = g.shape[-1] - 1
    batch = g.shape[:-1]
    phi = np.zeros(batch + (p,))
    refl = np.full(batch + (p,), np.nan)
    sig = np.full(batch + (p + 1,), np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(g[..., 0] > 0, g[..., 0], np.nan)
        sig[..., 0] = s
        for m in range(1, p + 1):
            acc = g[..., m] - np.einsum("...j,...j->...", phi[..., : m - 1], g[..., m - 1 : 0 : -1])
            kappa = acc / s
            kappa = np.where(np.abs(kappa) < 1.0, kappa, np.nan)
            prev = phi[..., : m - 1].copy()
            phi[..., : m - 1] = prev - kappa[..., None] * prev[..., ::-1]
            phi[..., m - 1] = kappa
            s = s * (1.0 - kappa * kappa)
            refl[..., m - 1] = kappa
            sig[..., m] = s
    return phi, sig, refl


def yule_walker(acv: AutocovarianceVector | ArrayLike, p: int | None = None) -> ArModel:
    """Fit AR(p) by solving the Yule-Walker equations (Levinson-Durbin).

    ``p`` defaults to the largest lag carried by ``acv``.
    """
    gamma = acv.gamma if isinstance(acv, AutocovarianceVector) else np.asarray(acv, dtype=float)
    if p is None:
        p = gamma.size - 1
    if p < 0 or gamma.size < p + 1:
        raise OrderTooLarge(f"autocovariance carries lags 0..{gamma.size - 1}, need 0..{p}")
    if not gamma[0] > 0:
        raise DegenerateSeries(f"lag-0 autocovariance must be positive, got {gamma[0]}")
    phi, sig, refl = levinson_durbin(gamma[: p + 1])
    if p and not np.all(np.isfinite(refl)):
        m = int(np.argmax(~np.isfinite(refl))) + 1
        raise SingularSystem(f"reflection coefficient at order {m} has modulus >= 1")
    return ArModel(phi, float(sig[-1]), refl)


def default_max_lag(n: int) -> int:
    """Default AIC order cap ``min(floor(10 log10 n), floor(n / 10))``."""
    if n < 1:
        return 0
    return max(0, min(int(math.floor(10.0 * math.log10(n))), n // 10))


def select_lag_aic(x: TimeSeries | ArrayLike, p_max: int | None = None) -> int:
    """Choose the AR order minimising ``n log(sigma2_p) + 2p`` over ``0..p_max``.

    Ties go to the smallest order. Orders whose recursion breaks down are
    skipped and logged.
    """
    arr = as_array(x)
    n = arr.size
    if p_max is None:
        p_max = default_max_lag(n)
    acv = sample_autocovariance(arr, p_max)
    if not acv.gamma[0] > 0:
        raise DegenerateSeries("constant segment: lag-0 autocovariance is zero")
    _, sig, _ = levinson_durbin(acv.gamma)
    best_p, best_aic = 0, math.inf
    for p in range(p_max + 1):
        s = sig[p]
        if not (np.isfinite(s) and s > 0):
            logger.debug("AIC: skipping order %d (innovation variance %r)", p, s)
            continue
        aic = n * math.log(s) + 2 * p
        if aic < best_aic:
            best_p, best_aic = p, aic
    return best_p


def ar_spectral_density(model: ArModel, lambdas: ArrayLike, tol: float = 1e-12) -> NDArray[np.float64]:
    """Spectral density ``sigma2 / (2 pi |1 - sum_j phi_j exp(-i j lambda)|^2)``."""
    lam = np.asarray(lambdas, dtype=float)
    j = np.arange(1, model.p + 1)
    if model.p:
        # cos/sin sums keep f(lambda) == f(-lambda) bit-exact
        arg = np.multiply.outer(np.abs(lam), j)
        re = 1.0 - np.cos(arg) @ model.phi
        im = np.sin(arg) @ model.phi
        mod2 = re * re + im * im
    else:
        mod2 = np.ones_like(lam)
    bad = np.flatnonzero(np.sqrt(mod2) < tol)
    if bad.size:
        raise SpectralPole(
            f"AR polynomial vanishes at {bad.size} frequencies, e.g. lambda={lam.flat[bad[0]]!r}",
            indices=bad,
        )
    return model.sigma2 / (2.0 * np.pi * mod2)


def residuals(
    x: TimeSeries | ArrayLike, model: ArModel, start: int = 0, stop: int | None = None
) -> NDArray[np.float64]:
    """One-step residuals ``x[t] - phi @ (x[t-1], ..., x[t-p])`` for ``t`` in ``[start, stop)``."""
    arr = as_array(x)
    T = arr.size
    if stop is None:
        stop = T
    p = model.p
    if start < p:
        raise InsufficientHistory(f"start index {start} leaves fewer than p={p} lagged values")
    if not 0 <= start <= stop <= T:
        raise InsufficientHistory(f"range [{start}, {stop}) outside series of length {T}")
    out = arr[start:stop].copy()
    for j in range(1, p + 1):
        out -= model.phi[j - 1] * arr[start - j : stop - j]
    return out
