"""Outer delay search: fit a sparse model per candidate delay, score by simulation."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dde_sim import DelayModel, HistorySpec, integrate, sample
from .denoise import SmootherSpec, estimate_derivatives
from .library import LibrarySpec, build_library_matrix, delayed_row_times
from .sparsify import BASELINE, FitTrace, greedy_eliminate
from .timeseries import DataError, TimeSeries

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DelayGrid:
    """Candidate delays, one strictly increasing axis per delay parameter."""

    axes: tuple

    def __post_init__(self):
        axes = tuple(tuple(float(v) for v in axis) for axis in self.axes)
        if not axes:
            raise ValueError("grid needs at least one axis")
        for axis in axes:
            if not axis:
                raise ValueError("grid axis is empty")
            if any(v < 0 for v in axis) or any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError("grid axis must be nonnegative and strictly increasing")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_range(cls, stop: float, step: float, start: float | None = None):
        """Axis ``start, start + step, ..., <= stop``; ``start`` defaults to ``step``."""
        start = step if start is None else start
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        if count < 1:
            raise ValueError("empty delay range")
        return cls(((np.round(start + np.arange(count) * step, 10)).tolist(),))

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def points(self) -> list[tuple]:
        return list(itertools.product(*self.axes))


@dataclass
class PointResult:
    error: float
    model: object = None
    traces: list = field(default_factory=list)
    diagnostic: str = ""


@dataclass
class SweepResult:
    grid: DelayGrid
    errors: dict
    models: dict
    traces: dict
    diagnostics: dict
    best: tuple

    @property
    def best_error(self) -> float:
        return self.errors[self.best]

    @property
    def best_model(self):
        return self.models[self.best]


@dataclass(frozen=True)
class FitConfig:
    """Settings for the inner sparse fit and the reconstruction scoring.

    ``h`` defaults to a tenth of the sampling step.
    """

    library: LibrarySpec
    smoother: SmootherSpec = SmootherSpec(25, 3)
    stop_increase: float = 0.10
    stop_mode: str = BASELINE
    h: float | None = None
    bound: float = 1e6
    smooth_regressors: bool = False
    workers: int = 1


def _default_step(observations: TimeSeries, h: float | None) -> float:
    if h is not None:
        return float(h)
    return observations.spacing() / 10.0


def reconstruction_error(model, observations: TimeSeries, history: HistorySpec,
                         h: float | None = None, t_start: float | None = None,
                         columns=None, bound: float = 1e6) -> float:
    """Normalized squared mismatch between the simulated model and the observations.

    Simulation starts at ``t_start`` (default: first observation plus the
    model's largest lag) from ``history``; observations at or after
    ``t_start`` are scored and also make up the normalization. ``columns``
    maps observation columns to model components. Returns ``inf`` if the
    simulation diverges before the last observation.
    """
    h = _default_step(observations, h)
    times = observations.times
    if t_start is None:
        t_start = float(times[0] + model.max_lag)
    tol = 1e-9 * max(h, abs(t_start))
    scored = times >= t_start - tol
    obs = observations.values[scored]
    z = float(np.sum(obs * obs))
    if z == 0.0:
        raise DataError("observations are identically zero; error is undefined")
    t_scored = times[scored]
    if t_scored[-1] <= t_start + tol:
        traj_vals = history.evaluate([t_start])[0]
        sim = np.tile(traj_vals, (t_scored.size, 1))
    else:
        traj = integrate(model, history, t_start, float(t_scored[-1]), h, bound)
        if traj.diverged:
            return math.inf
        sim = sample(traj, np.clip(t_scored, t_start, None))
    if columns is not None:
        sim = sim[:, list(columns)]
    diff = sim - obs
    err = float(np.sum(diff * diff)) / z
    return err if math.isfinite(err) else math.inf


class ToyProblem:
    """Single-delay fit of a series whose channels all share one delay.

    ``series`` must carry derivative estimates (computed once, reused for
    every candidate delay). Candidate models are scored from a history given
    by the smoothed observations over the first ``tau`` time units.
    """

    def __init__(self, series: TimeSeries, config: FitConfig):
        if series.derivs is None:
            raise DataError("series needs derivative estimates")
        self.series = series
        self.config = config
        self.history = HistorySpec.sampled(series.with_values(series.values), config.smoother)
        self.h = _default_step(series, config.h)

    def fit(self, tau: float):
        """Sparse model for delay ``tau``; returns ``(DelayModel, traces)``."""
        cfg = self.config
        rows = delayed_row_times(self.series, tau)
        if rows.size == 0:
            raise DataError(f"no rows available at delay {tau}")
        theta = build_library_matrix(self.series, cfg.library, tau, cfg.smoother, rows,
                                     smooth=cfg.smooth_regressors)
        keep = np.isin(self.series.times, rows)
        targets = self.series.derivs[keep]
        coeffs = np.zeros((theta.shape[1], self.series.dim))
        traces = []
        for k in range(self.series.dim):
            c, _, trace = greedy_eliminate(theta, targets[:, k], cfg.stop_increase,
                                           cfg.stop_mode)
            coeffs[:, k] = c
            traces.append(trace)
        model = DelayModel(cfg.library, coeffs, [tau] * self.series.dim)
        return model, traces

    def score(self, model: DelayModel) -> float:
        return reconstruction_error(model, self.series, self.history, self.h,
                                    bound=self.config.bound)

    def evaluate(self, point: tuple) -> PointResult:
        (tau,) = point
        model, traces = self.fit(tau)
        return PointResult(self.score(model), model, traces)


def _evaluate_safely(problem, point) -> PointResult:
    try:
        return problem.evaluate(point)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.info("grid point %s failed: %s", point, exc)
        return PointResult(math.inf, diagnostic=str(exc))


def sweep(problem, grid: DelayGrid, workers: int = 1) -> SweepResult:
    """Evaluate ``problem`` at every grid point and select the minimum error.

    Failing points get infinite error and a diagnostic. Ties are resolved to
    the lexicographically smallest delay tuple, so the outcome does not depend
    on ``workers``.
    """
    points = grid.points()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda p: _evaluate_safely(problem, p), points))
    else:
        results = [_evaluate_safely(problem, p) for p in points]
    errors, models, traces, diagnostics = {}, {}, {}, {}
    best = None
    for point, res in zip(points, results):
        err = res.error if not math.isnan(res.error) else math.inf
        errors[point] = err
        models[point] = res.model
        traces[point] = res.traces
        if res.diagnostic:
            diagnostics[point] = res.diagnostic
        if best is None or err < errors[best]:
            best = point
    return SweepResult(grid, errors, models, traces, diagnostics, best)


def fit_toy(series: TimeSeries, grid: DelayGrid, config: FitConfig,
            derivs_given: bool = False) -> SweepResult:
    """Estimate derivatives once (unless supplied) and sweep the delay grid."""
    if not derivs_given or series.derivs is None:
        series = estimate_derivatives(series, config.smoother)
    return sweep(ToyProblem(series, config), grid, config.workers)


def error_profile(result: SweepResult):
    """Error landscape: ``(point, error)`` rows, plus a matrix for 2-axis grids."""
    rows = [(p, result.errors[p]) for p in result.grid.points()]
    if result.grid.ndim != 2:
        return rows, None
    a, b = result.grid.axes
    surface = np.array([[result.errors[(x, y)] for y in b] for x in a])
    return rows, surface


def write_profile_csv(result: SweepResult, path) -> None:
    rows, _ = error_profile(result)
    header = [f"tau_{i + 1}" for i in range(result.grid.ndim)] + ["error"]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for point, err in rows:
            writer.writerow([*(f"{v:.17g}" for v in point), f"{err:.17g}"])


def refine_minimum(result: SweepResult) -> float:
    """Sub-grid delay estimate from a parabola through the argmin and its neighbours.

    Falls back to the grid argmin at the axis ends or when the neighbours are
    not finite or the parabola is not convex.
    """
    if result.grid.ndim != 1:
        raise ValueError("refinement is only defined for one-axis grids")
    axis = result.grid.axes[0]
    i = axis.index(result.best[0])
    if i == 0 or i == len(axis) - 1:
        return axis[i]
    xs = np.array(axis[i - 1:i + 2])
    ys = np.array([result.errors[(x,)] for x in xs])
    if not np.all(np.isfinite(ys)):
        return axis[i]
    a, b, _ = np.polyfit(xs - xs[1], ys, 2)
    if a <= 0:
        return axis[i]
    return float(np.clip(xs[1] - b / (2 * a), xs[0], xs[2]))
