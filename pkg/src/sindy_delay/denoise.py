"""Local polynomial regression for smoothing and differentiating sampled data.

Each estimate comes from a least-squares polynomial fitted to ``2r + 1``
consecutive samples. Interior points use the centred window; near the ends the
window is shifted (not truncated) so it always holds ``2r + 1`` samples.
Fits are done in a time coordinate centred on the evaluation point and scaled
to the window half-width, then solved by QR.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .timeseries import DataError, TimeSeries


@dataclass(frozen=True)
class SmootherSpec:
    radius: int = 25
    degree: int = 3

    def __post_init__(self):
        if int(self.radius) < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if int(self.degree) < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        if self.window <= self.degree + 1:
            raise ValueError(
                f"window of {self.window} points does not overdetermine a "
                f"degree-{self.degree} fit"
            )

    @property
    def window(self) -> int:
        return 2 * int(self.radius) + 1

    def half_width(self, dt: float) -> float:
        """Window half-width ``r * dt`` for uniform sampling step ``dt``."""
        return self.radius * dt


def _window_starts(anchor: np.ndarray, n: int, spec: SmootherSpec) -> np.ndarray:
    return np.clip(anchor - spec.radius, 0, n - spec.window)


def _check_length(series: TimeSeries, spec: SmootherSpec) -> None:
    if series.n < spec.window:
        raise DataError(
            f"series of {series.n} samples is too short for a {spec.window}-point window"
        )


def _local_fit(series: TimeSeries, spec: SmootherSpec, centers, starts):
    """Fit one polynomial per centre; return (values, derivatives), each ``m x d``."""
    idx = starts[:, None] + np.arange(spec.window)[None, :]
    offsets = series.times[idx] - centers[:, None]
    scale = np.max(np.abs(offsets), axis=1)
    scale[scale == 0] = 1.0
    s = offsets / scale[:, None]
    vander = s[:, :, None] ** np.arange(spec.degree + 1)[None, None, :]
    q, r = np.linalg.qr(vander)
    rhs = np.einsum("mwp,mwd->mpd", q, series.values[idx])
    coef = np.linalg.solve(r, rhs)
    value = coef[:, 0, :]
    if spec.degree >= 1:
        deriv = coef[:, 1, :] / scale[:, None]
    else:
        deriv = np.zeros_like(value)
    return value, deriv


def estimate_derivatives(
    series: TimeSeries, spec: SmootherSpec, smooth_values: bool = False
) -> TimeSeries:
    """Return ``series`` with ``derivs`` filled from local polynomial fits.

    Values are kept as observed unless ``smooth_values`` is set, in which case
    they are replaced by the fitted polynomial values.
    """
    _check_length(series, spec)
    n = series.n
    starts = _window_starts(np.arange(n), n, spec)
    value, deriv = _local_fit(series, spec, series.times, starts)
    values = value if smooth_values else series.values
    return TimeSeries(series.times, values, deriv, series.meta)


def _nearest_index(times: np.ndarray, t: np.ndarray) -> np.ndarray:
    right = np.clip(np.searchsorted(times, t), 1, times.size - 1)
    left = right - 1
    pick_right = (times[right] - t) < (t - times[left])
    return np.where(pick_right, right, left)


def evaluate_many(series: TimeSeries, spec: SmootherSpec, t):
    """Vectorised :func:`evaluate_at`; returns ``(values, derivs)`` of shape ``m x d``."""
    _check_length(series, spec)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    lo, hi = series.times[0], series.times[-1]
    tol = 1e-12 * max(abs(lo), abs(hi), hi - lo)
    outside = (t < lo - tol) | (t > hi + tol)
    if np.any(outside):
        bad = t[outside][0]
        raise DataError(f"time {bad!r} outside observed range [{lo}, {hi}]")
    starts = _window_starts(_nearest_index(series.times, t), series.n, spec)
    return _local_fit(series, spec, t, starts)


def evaluate_at(series: TimeSeries, spec: SmootherSpec, t: float):
    """Value and derivative at ``t`` of the polynomial fitted to the nearest samples."""
    value, deriv = evaluate_many(series, spec, [t])
    return value[0], deriv[0]
