"""Model wiring for the ENSO toy oscillator and the two-strain zinc-response problem."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .dde_sim import (DelayModel, HistorySpec, Trajectory, find_periodic_history,
                      integrate, sample)
from .delay_opt import DelayGrid, PointResult, SweepResult, reconstruction_error, sweep
from .denoise import SmootherSpec, estimate_derivatives, evaluate_many
from .library import EXCLUDE_MIXED, FULL, LibrarySpec, enumerate_terms, evaluate_terms, exponent_matrix
from .sparsify import BASELINE, greedy_eliminate
from .timeseries import DataError, NoiseSpec, TimeSeries, add_noise

# ---------------------------------------------------------------- ENSO toy model

ENSO_LIBRARY = LibrarySpec(1, 3, delayed=True, cross_policy=EXCLUDE_MIXED)


@dataclass(frozen=True)
class EnsoSpec:
    """``x' = x - x^3 - alpha * x(t - tau)`` sampled at ``t_n = n * dt``, ``n = 1..N``."""

    alpha: float = 0.75
    tau: float = 7.0
    n_samples: int = 4000
    dt: float = 0.025
    noise: NoiseSpec = NoiseSpec()
    burn_in: float = 200.0

    def __post_init__(self):
        if not self.tau > 0 or not self.dt > 0:
            raise ValueError("tau and dt must be positive")
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples")


def enso_model(alpha: float = 0.75, tau: float = 7.0) -> DelayModel:
    terms = enumerate_terms(ENSO_LIBRARY)
    coeffs = np.zeros((len(terms), 1))
    coeffs[terms.index((1, 0))] = 1.0
    coeffs[terms.index((3, 0))] = -1.0
    coeffs[terms.index((0, 1))] = -alpha
    return DelayModel(ENSO_LIBRARY, coeffs, [tau], meta={"name": "enso"})


def generate_enso(spec: EnsoSpec, h: float | None = None):
    """Simulate the toy DDE from its periodic orbit (``x(0) = 1``).

    Returns ``(truth, observed)``. ``truth`` carries the exact states and the
    model right-hand side at each sample; ``observed`` is ``truth`` with
    noise added (and derivatives dropped) when ``gamma > 0``.
    """
    h = spec.dt / 10.0 if h is None else h
    model = enso_model(spec.alpha, spec.tau)
    history = find_periodic_history(model, spec.burn_in, 1.0, h=h)
    times = np.arange(1, spec.n_samples + 1) * spec.dt
    traj = integrate(model, history, 0.0, float(times[-1]), h)
    if traj.diverged:
        raise DataError("ENSO generator diverged")
    values = sample(traj, times)
    lagged_t = times - spec.tau
    lagged = np.empty_like(values)
    past = lagged_t < 0
    if np.any(past):
        lagged[past] = history.evaluate(lagged_t[past])[0]
    if np.any(~past):
        lagged[~past] = sample(traj, lagged_t[~past])
    derivs = model.field(values, lagged)
    meta = {"channels": ["x"], "alpha": spec.alpha, "tau": spec.tau, "dt": spec.dt}
    truth = TimeSeries(times, values, derivs, meta)
    if spec.noise.gamma == 0:
        return truth, truth
    return truth, add_noise(truth, spec.noise)


# ------------------------------------------------------------ zinc response model

BIO_LIBRARY = LibrarySpec(2, 3, delayed=False, cross_policy=FULL)
BIO_TERMS = enumerate_terms(BIO_LIBRARY)
_BIO_EXPS = exponent_matrix(BIO_TERMS)
BIO_TERM_NAMES = {
    (0, 0, 0, 0): "1", (1, 0, 0, 0): "x", (0, 1, 0, 0): "y",
    (2, 0, 0, 0): "x^2", (1, 1, 0, 0): "xy", (0, 2, 0, 0): "y^2",
    (3, 0, 0, 0): "x^3", (2, 1, 0, 0): "x^2y", (1, 2, 0, 0): "xy^2",
    (0, 3, 0, 0): "y^3",
}
_NAME_INDEX = {BIO_TERM_NAMES[t]: i for i, t in enumerate(BIO_TERMS)}


def bio_term_names() -> list[str]:
    return [BIO_TERM_NAMES[t] for t in BIO_TERMS]


@dataclass(frozen=True)
class BioModel:
    """``x' = f(x, y)`` and, after a dormant phase of ``tau``, ``y'(t) = g(x, y)(t - tau)``.

    ``tau_wt`` applies to the wild type and ``tau_dca`` to the strain lacking x.
    """

    f_coeffs: np.ndarray
    g_coeffs: np.ndarray
    tau_wt: float
    tau_dca: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("f_coeffs", "g_coeffs"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if arr.size != len(BIO_TERMS):
                raise ValueError(f"{name} must have {len(BIO_TERMS)} entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.tau_wt < 0 or self.tau_dca < 0:
            raise ValueError("delays must be nonnegative")

    @classmethod
    def from_named(cls, f: dict, g: dict, tau_wt, tau_dca, meta=None) -> "BioModel":
        fc = np.zeros(len(BIO_TERMS))
        gc = np.zeros(len(BIO_TERMS))
        for coeffs, named in ((fc, f), (gc, g)):
            for name, value in named.items():
                coeffs[_NAME_INDEX[name]] = value
        return cls(fc, gc, float(tau_wt), float(tau_dca), dict(meta or {}))

    def named(self) -> dict:
        names = bio_term_names()
        return {
            "f": {n: float(c) for n, c in zip(names, self.f_coeffs) if c != 0},
            "g": {n: float(c) for n, c in zip(names, self.g_coeffs) if c != 0},
        }

    def wiring(self, strain: str) -> DelayModel:
        """Delay model for ``"wt"``, ``"dczc"`` (no y) or ``"dcad"`` (no x)."""
        zero = np.zeros_like(self.f_coeffs)
        if strain == "wt":
            cols, shift = (self.f_coeffs, self.g_coeffs), self.tau_wt
        elif strain == "dczc":
            cols, shift = (self.f_coeffs, zero), 0.0
        elif strain == "dcad":
            cols, shift = (zero, self.g_coeffs), self.tau_dca
        else:
            raise ValueError(f"unknown strain {strain!r}")
        return DelayModel(BIO_LIBRARY, np.column_stack(cols), [0.0, 0.0],
                          shifts=[0.0, shift], dormant=True, meta={"strain": strain})

    def simulate(self, strain: str, t_end: float, h: float = 0.5) -> Trajectory:
        return integrate(self.wiring(strain), HistorySpec.zero(2), 0.0, t_end, h)


def simulate_bio(model: BioModel, t_end: float, h: float = 0.5) -> Trajectory:
    """Wild-type trajectory from zero initial state."""
    return model.simulate("wt", t_end, h)


@dataclass(frozen=True)
class BioProblem:
    """Normalized fluorescence series for the three strains at one zinc level.

    ``wt`` has columns (x, y); ``delta_czc`` only x; ``delta_cad`` only y.
    """

    wt: TimeSeries
    delta_czc: TimeSeries
    delta_cad: TimeSeries
    zinc_mM: float = math.nan

    def __post_init__(self):
        for name, s, dim in (("wt", self.wt, 2), ("delta_czc", self.delta_czc, 1),
                             ("delta_cad", self.delta_cad, 1)):
            if s.dim != dim:
                raise DataError(f"{name} must have {dim} channel(s), has {s.dim}")
            if s.times[0] != 0 or np.any(s.values[0] != 0):
                raise DataError(f"{name} must start at t=0 with value 0 (shift_to_zero)")
            s.spacing()


@dataclass(frozen=True)
class BioConfig:
    smoother: SmootherSpec = SmootherSpec(2, 2)
    stop_increase: float = 0.10
    stop_mode: str = BASELINE
    h: float | None = None
    bound: float = 1e6
    error_mode: str = "sum"
    workers: int = 1


def _regressors(x, y) -> np.ndarray:
    z = np.column_stack([x, y, np.zeros_like(x), np.zeros_like(x)])
    return evaluate_terms(_BIO_EXPS, z)


class BioFitProblem:
    """Joint fit of shared ``f`` and ``g`` across the three strains.

    ``f`` is fitted once on stacked wild-type and ``delta_czc`` rows (it does
    not depend on the delays). For each delay pair, ``g`` is fitted on rows
    pairing states at ``t_n`` with ``y'`` at ``t_n + tau``.
    """

    def __init__(self, problem: BioProblem, config: BioConfig = BioConfig()):
        if config.error_mode not in ("sum", "concatenated"):
            raise ValueError(f"unknown error_mode {config.error_mode!r}")
        for name, s in (("wt", problem.wt), ("delta_czc", problem.delta_czc),
                        ("delta_cad", problem.delta_cad)):
            if not np.any(s.values):
                raise DataError(f"{name} observations are identically zero")
        self.problem = problem
        self.config = config
        sm = config.smoother
        self.wt = estimate_derivatives(problem.wt, sm)
        self.dczc = estimate_derivatives(problem.delta_czc, sm)
        self.dcad = problem.delta_cad
        self.h = config.h if config.h is not None else problem.wt.spacing() / 10.0
        theta_f = np.vstack([
            _regressors(self.wt.values[:, 0], self.wt.values[:, 1]),
            _regressors(self.dczc.values[:, 0], np.zeros(self.dczc.n)),
        ])
        target_f = np.concatenate([self.wt.derivs[:, 0], self.dczc.derivs[:, 0]])
        self.f_coeffs, _, self.f_trace = greedy_eliminate(
            theta_f, target_f, config.stop_increase, config.stop_mode)

    def _shifted_rows(self, series: TimeSeries, tau: float, column: int):
        tol = 1e-9 * series.spacing()
        keep = series.times + tau <= series.times[-1] + tol
        shifted = np.minimum(series.times[keep] + tau, series.times[-1])
        deriv = evaluate_many(series.with_values(series.values), self.config.smoother,
                              shifted)[1][:, column]
        return keep, deriv

    def fit(self, tau_wt: float, tau_dca: float):
        cfg = self.config
        keep_wt, target_wt = self._shifted_rows(self.problem.wt, tau_wt, 1)
        keep_ca, target_ca = self._shifted_rows(self.dcad, tau_dca, 0)
        wt_vals = self.problem.wt.values[keep_wt]
        y_ca = self.dcad.values[keep_ca, 0]
        theta_g = np.vstack([
            _regressors(wt_vals[:, 0], wt_vals[:, 1]),
            _regressors(np.zeros_like(y_ca), y_ca),
        ])
        target_g = np.concatenate([target_wt, target_ca])
        g_coeffs, _, g_trace = greedy_eliminate(theta_g, target_g, cfg.stop_increase,
                                                cfg.stop_mode)
        model = BioModel(self.f_coeffs, g_coeffs, tau_wt, tau_dca,
                         meta={"zinc_mM": self.problem.zinc_mM})
        return model, [self.f_trace, g_trace]

    def score(self, model: BioModel) -> float:
        cfg = self.config
        zero = HistorySpec.zero(2)
        parts = []
        for strain, series, cols in (("wt", self.problem.wt, [0, 1]),
                                     ("dczc", self.problem.delta_czc, [0]),
                                     ("dcad", self.problem.delta_cad, [1])):
            parts.append((model.wiring(strain), series, cols))
        if cfg.error_mode == "sum":
            return sum(
                reconstruction_error(m, s, zero, self.h, t_start=0.0, columns=c,
                                     bound=cfg.bound)
                for m, s, c in parts
            )
        num = den = 0.0
        for m, s, c in parts:
            z = float(np.sum(s.values**2))
            e = reconstruction_error(m, s, zero, self.h, t_start=0.0, columns=c,
                                     bound=cfg.bound)
            num += e * z
            den += z
        return num / den

    def evaluate(self, point) -> PointResult:
        tau_wt, tau_dca = point
        model, traces = self.fit(tau_wt, tau_dca)
        return PointResult(self.score(model), model, traces)


def bio_grid(stop: float = 160.0, step: float = 5.0) -> DelayGrid:
    axis = DelayGrid.from_range(stop, step, start=0.0).axes[0]
    return DelayGrid((axis, axis))


def fit_bio(problem: BioProblem, grid: DelayGrid | None = None,
            config: BioConfig = BioConfig()):
    """Sweep the (tau_wt, tau_dca) grid; returns ``(best BioModel, SweepResult)``."""
    grid = bio_grid() if grid is None else grid
    if grid.ndim != 2:
        raise ValueError("bio fit needs a two-axis delay grid")
    result = sweep(BioFitProblem(problem, config), grid, config.workers)
    if result.best_model is None:
        raise DataError("no grid point produced a finite model")
    return result.best_model, result


def synthesize_bio(model: BioModel, t_end: float = 160.0, dt: float = 5.0,
                   noise: NoiseSpec | None = None, h: float | None = None) -> BioProblem:
    """Three-strain dataset simulated from ``model``, optionally with noise.

    Noise is added after sampling; rows are then re-based so that every
    series starts at zero, as for experimental data.
    """
    h = dt / 10.0 if h is None else h
    n = int(round(t_end / dt))
    times = np.arange(n + 1) * dt
    out = {}
    for i, (strain, cols, names) in enumerate((("wt", [0, 1], ["cadA", "czcA"]),
                                               ("dczc", [0], ["cadA"]),
                                               ("dcad", [1], ["czcA"]))):
        traj = model.simulate(strain, float(times[-1]), h)
        if traj.diverged:
            raise DataError(f"{strain} simulation diverged")
        vals = sample(traj, times)[:, cols]
        series = TimeSeries(times, vals, meta={"channels": names, "strain": strain})
        if noise is not None and noise.gamma > 0:
            series = add_noise(series, NoiseSpec(noise.gamma, noise.seed + i))
            series = TimeSeries(series.times, series.values - series.values[0],
                                meta=series.meta)
        out[strain] = series
    zinc = model.meta.get("zinc_mM", math.nan)
    return BioProblem(out["wt"], out["dczc"], out["dcad"], zinc)


def load_reference_models() -> list[dict]:
    """Published per-concentration models as shipped with the package."""
    text = resources.files("sindy_delay").joinpath("data/reference_models.json").read_text()
    return json.loads(text)["rows"]


def reference_model(zinc_mM: float) -> BioModel:
    for row in load_reference_models():
        if math.isclose(row["zinc_mM"], zinc_mM):
            return BioModel.from_named(row["f"], row["g"], row["tau_wt"], row["tau_dca"],
                                       {"zinc_mM": row["zinc_mM"],
                                        "reported_error": row["error"]})
    raise KeyError(f"no fixture for {zinc_mM} mM")


def delay_concentration_slope(rows) -> float:
    """Least-squares slope through the origin of delay against concentration."""
    rows = list(rows)
    if len(rows) < 2:
        raise ValueError("need at least two (concentration, delay) rows")
    c = np.array([r[0] for r in rows], dtype=float)
    tau = np.array([r[1] for r in rows], dtype=float)
    denom = float(c @ c)
    if denom == 0:
        raise ValueError("all concentrations are zero")
    return float(c @ tau) / denom
