"""Comparison metrics between full-simulation and replay measurement series."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from leotrace.errors import CorrelationError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_BIN_S = 0.1
DEFAULT_MAX_LAG_S = 3.0


@dataclass(frozen=True)
class TimeSeries:
    t0_s: float
    bin_s: float
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.bin_s <= 0:
            raise UsageError("bin width must be positive")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.t0_s + self.bin_s * np.arange(len(self.values))

    def mean(self) -> float:
        return float(np.nanmean(self.values)) if len(self.values) else math.nan


def goodput_series(
    deliveries: Iterable[tuple[float, int]],
    bin_s: float = DEFAULT_BIN_S,
    duration_s: float | None = None,
    t0_s: float = 0.0,
) -> TimeSeries:
    """Delivered payload bits per bin divided by the bin width (bps)."""
    if bin_s <= 0:
        raise UsageError("bin width must be positive")
    pairs = np.array(list(deliveries), dtype=float).reshape(-1, 2)
    times, sizes = pairs[:, 0], pairs[:, 1]
    if duration_s is None:
        duration_s = float(times.max() - t0_s) if len(times) else bin_s
    nbins = max(1, math.ceil(duration_s / bin_s - 1e-9))
    idx = np.floor((times - t0_s) / bin_s).astype(int)
    keep = (idx >= 0) & (idx < nbins)
    bits = np.bincount(idx[keep], weights=sizes[keep] * 8.0, minlength=nbins)
    return TimeSeries(t0_s, bin_s, bits / bin_s)


def sample_series(
    samples: Iterable[tuple[float, float]],
    bin_s: float,
    duration_s: float,
    t0_s: float = 0.0,
) -> TimeSeries:
    """Last value at or before each bin end (step-hold), NaN before the first sample."""
    pairs = np.array(list(samples), dtype=float).reshape(-1, 2)
    nbins = max(1, math.ceil(duration_s / bin_s - 1e-9))
    ends = t0_s + bin_s * (np.arange(nbins) + 1)
    pos = np.searchsorted(pairs[:, 0], ends, side="right") - 1
    values = np.where(pos >= 0, pairs[np.clip(pos, 0, None), 1] if len(pairs) else math.nan, math.nan)
    return TimeSeries(t0_s, bin_s, values)


def _paired(a: TimeSeries | Sequence[float], b: TimeSeries | Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(a, TimeSeries) and isinstance(b, TimeSeries) and not math.isclose(a.bin_s, b.bin_s):
        raise UsageError(f"bin widths differ ({a.bin_s} vs {b.bin_s})")
    x = np.asarray(a.values if isinstance(a, TimeSeries) else a, dtype=float)
    y = np.asarray(b.values if isinstance(b, TimeSeries) else b, dtype=float)
    if x.shape != y.shape:
        raise UsageError(f"series lengths differ ({len(x)} vs {len(y)})")
    mask = np.isfinite(x) & np.isfinite(y)
    return x[mask], y[mask]


def mae(a: TimeSeries | Sequence[float], b: TimeSeries | Sequence[float]) -> float:
    """Mean absolute error over bins where both values are finite."""
    x, y = _paired(a, b)
    if len(x) == 0:
        raise UsageError("no overlapping finite values")
    return float(np.mean(np.abs(x - y)))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 2:
        raise CorrelationError("need at least two paired values")
    dx, dy = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if denom == 0.0:
        raise CorrelationError("correlation undefined for a constant series")
    return float(np.clip(np.dot(dx, dy) / denom, -1.0, 1.0))


def pearson(a: TimeSeries | Sequence[float], b: TimeSeries | Sequence[float]) -> float:
    return _pearson(*_paired(a, b))


def r_squared(a: TimeSeries | Sequence[float], b: TimeSeries | Sequence[float]) -> float:
    """Coefficient of determination of b as a prediction of the reference a."""
    x, y = _paired(a, b)
    if len(x) < 2:
        raise CorrelationError("need at least two paired values")
    ss_tot = float(np.sum((x - x.mean()) ** 2))
    if ss_tot == 0.0:
        raise CorrelationError("R^2 undefined for a constant reference series")
    return 1.0 - float(np.sum((x - y) ** 2)) / ss_tot


@dataclass(frozen=True)
class LagResult:
    lag_bins: int
    pearson: float
    bin_s: float = 1.0

    @property
    def lag_s(self) -> float:
        return self.lag_bins * self.bin_s


def best_lag(a: TimeSeries | Sequence[float], b: TimeSeries | Sequence[float], max_lag_bins: int) -> LagResult:
    """Integer shift of b against a that maximizes Pearson (a[i] pairs with b[i+lag]).

    Ties go to the smaller |lag|, then to the positive shift.
    """
    bin_s = a.bin_s if isinstance(a, TimeSeries) else 1.0
    x = np.asarray(a.values if isinstance(a, TimeSeries) else a, dtype=float)
    y = np.asarray(b.values if isinstance(b, TimeSeries) else b, dtype=float)
    if x.shape != y.shape:
        raise UsageError(f"series lengths differ ({len(x)} vs {len(y)})")
    if max_lag_bins < 0 or not max_lag_bins < len(x) / 2:
        raise UsageError(f"max lag {max_lag_bins} must be below half the series length {len(x)}")

    best: LagResult | None = None
    for lag in _lags(max_lag_bins):
        if lag >= 0:
            xs, ys = x[: len(x) - lag], y[lag:]
        else:
            xs, ys = x[-lag:], y[: len(y) + lag]
        mask = np.isfinite(xs) & np.isfinite(ys)
        try:
            r = _pearson(xs[mask], ys[mask])
        except CorrelationError:
            continue
        if best is None or r > best.pearson:
            best = LagResult(lag, r, bin_s)
    if best is None:
        raise UsageError("no shift leaves a non-degenerate overlap")
    return best


def _lags(max_lag: int) -> Iterable[int]:
    yield 0
    for k in range(1, max_lag + 1):
        yield k
        yield -k


@dataclass(frozen=True)
class Comparison:
    mae: float
    r_squared: float
    pearson: float
    lag_s: float
    lag_pearson: float
    mean_reference: float

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("mae", self.mae),
            ("r_squared", self.r_squared),
            ("pearson", self.pearson),
            ("lag_s", self.lag_s),
            ("lag_corrected_pearson", self.lag_pearson),
            ("mean_reference", self.mean_reference),
        ]


def compare(reference: TimeSeries, other: TimeSeries, max_lag_s: float = DEFAULT_MAX_LAG_S) -> Comparison:
    """All comparison metrics of `other` against `reference`."""
    n = min(len(reference), len(other))
    a = TimeSeries(reference.t0_s, reference.bin_s, reference.values[:n])
    b = TimeSeries(other.t0_s, other.bin_s, other.values[:n])
    max_lag = min(int(round(max_lag_s / a.bin_s)), math.ceil(n / 2) - 1)
    lag = best_lag(a, b, max(max_lag, 0))
    return Comparison(
        mae=mae(a, b),
        r_squared=r_squared(a, b),
        pearson=pearson(a, b),
        lag_s=lag.lag_s,
        lag_pearson=lag.pearson,
        mean_reference=a.mean(),
    )
