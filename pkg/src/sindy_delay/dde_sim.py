"""Fixed-step RK4 method-of-steps integration of polynomial delay models.

Component ``k`` of a :class:`DelayModel` obeys

    x_k'(t) = sum_j coeffs[j, k] * theta_j(x(t - s_k), x(t - s_k - tau_k))

where ``theta_j`` are the library monomials, ``tau_k`` is the delay of the
delayed channels and ``s_k`` an evaluation-time shift (zero for ordinary
DDEs). With ``dormant`` set, a component with ``s_k > 0`` is held constant
until ``t0 + s_k``. Past states are looked up by cubic Hermite interpolation
of the stored solution, which keeps separate left and right derivatives at
each grid node so kinks at ``t0`` and at dormancy switches are interpolated
on the correct side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.optimize import brentq

from .denoise import SmootherSpec, evaluate_many
from .library import LibrarySpec, enumerate_terms, evaluate_terms, exponent_matrix
from .timeseries import DataError, TimeSeries

DEFAULT_BOUND = 1e6
_SNAP = 1e-9


class IntegrationError(ValueError):
    """Raised for invalid integration requests."""


@dataclass(frozen=True)
class DelayModel:
    spec: LibrarySpec
    coeffs: np.ndarray
    delays: np.ndarray
    shifts: np.ndarray | None = None
    dormant: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.spec.dim
        coeffs = np.array(self.coeffs, dtype=float).reshape(-1, d)
        delays = np.broadcast_to(np.asarray(self.delays, dtype=float), (d,)).copy()
        shifts = np.zeros(d) if self.shifts is None else np.array(self.shifts, dtype=float)
        shifts = np.broadcast_to(shifts, (d,)).copy()
        n_terms = self.spec.expected_size()
        if coeffs.shape[0] != n_terms:
            raise ValueError(f"coeffs has {coeffs.shape[0]} rows, library has {n_terms}")
        for name, arr in (("delays", delays), ("shifts", shifts)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} must be finite and nonnegative")
        for arr in (coeffs, delays, shifts):
            arr.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "shifts", shifts)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def terms(self):
        return enumerate_terms(self.spec)

    @property
    def max_lag(self) -> float:
        lags = self.shifts + (self.delays if self.spec.delayed else 0.0)
        return float(np.max(np.concatenate([lags, self.shifts])))

    def active(self) -> np.ndarray:
        return self.coeffs != 0

    def field(self, current, delayed) -> np.ndarray:
        """Right-hand side for rows of current and delayed states (no shifts)."""
        z = np.hstack([np.atleast_2d(current), np.atleast_2d(delayed)])
        return evaluate_terms(exponent_matrix(self.terms), z) @ self.coeffs


@dataclass(frozen=True)
class HistorySpec:
    """State before the integration start: constant, zero, or sampled.

    A sampled history is evaluated with the local polynomial smoother when
    ``smoother`` is given, otherwise by cubic Hermite interpolation of the
    series values and its ``derivs``.
    """

    kind: str
    value: np.ndarray | None = None
    series: TimeSeries | None = None
    smoother: SmootherSpec | None = None

    @classmethod
    def constant(cls, value) -> "HistorySpec":
        return cls("constant", value=np.atleast_1d(np.asarray(value, dtype=float)))

    @classmethod
    def zero(cls, dim: int) -> "HistorySpec":
        return cls("zero", value=np.zeros(dim))

    @classmethod
    def sampled(cls, series: TimeSeries, smoother: SmootherSpec | None = None):
        if smoother is None and series.derivs is None:
            raise DataError("Hermite history needs a series with derivatives")
        return cls("sampled", series=series, smoother=smoother)

    def evaluate(self, t):
        """Return ``(values, derivs)`` at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind in ("constant", "zero"):
            vals = np.tile(self.value, (t.size, 1))
            return vals, np.zeros_like(vals)
        s = self.series
        span = s.times[-1] - s.times[0]
        tol = 1e-9 * span
        if np.any(t < s.times[0] - tol) or np.any(t > s.times[-1] + tol):
            raise DataError(
                f"history covers [{s.times[0]}, {s.times[-1]}], "
                f"requested [{t.min()}, {t.max()}]"
            )
        t = np.clip(t, s.times[0], s.times[-1])
        if self.smoother is not None:
            return evaluate_many(s, self.smoother, t)
        return hermite(s.times, s.values, s.derivs, s.derivs, t, with_derivs=True)


def hermite(times, values, dright, dleft, t, with_derivs=False):
    """Piecewise cubic Hermite interpolation on a (possibly non-uniform) grid.

    Interval ``[i, i+1]`` uses ``dright[i]`` and ``dleft[i+1]``. Times within
    a relative ``1e-9`` of a node return the stored node value exactly.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    j = np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2)
    w = times[j + 1] - times[j]
    theta = (t - times[j]) / w
    at_right = np.abs(theta - 1.0) < _SNAP
    at_left = np.abs(theta) < _SNAP
    th = np.where(at_left | at_right, 0.0, theta)[:, None]
    ww = w[:, None]
    y0, y1 = values[j], values[j + 1]
    f0, f1 = dright[j], dleft[j + 1]
    out = ((2 * th**3 - 3 * th**2 + 1) * y0 + (th**3 - 2 * th**2 + th) * ww * f0
           + (-2 * th**3 + 3 * th**2) * y1 + (th**3 - th**2) * ww * f1)
    out[at_left] = y0[at_left]
    out[at_right] = y1[at_right]
    if not with_derivs:
        return out
    deriv = ((6 * th**2 - 6 * th) / ww * y0 + (3 * th**2 - 4 * th + 1) * f0
             + (-6 * th**2 + 6 * th) / ww * y1 + (3 * th**2 - 2 * th) * f1)
    deriv[at_left] = f0[at_left]
    # at a node reached from the left, report the right-sided derivative there
    nxt = np.minimum(j + 1, times.size - 1)
    deriv[at_right] = dright[nxt][at_right]
    return out, deriv


@dataclass(frozen=True)
class Trajectory:
    """Dense solution on the uniform grid ``t0 + i*h``.

    ``derivs`` are the right-sided derivatives at the grid nodes. If the
    solution left the divergence bound, ``diverged`` is set and the arrays
    stop at the last good node.
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    left_derivs: np.ndarray
    h: float
    diverged: bool = False

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])


@njit(cache=True)
def _lookup(u, imax, h, states, dright, dleft, out):
    """Hermite interpolation at fractional row index ``u`` (rows <= imax known)."""
    d = states.shape[1]
    if u >= imax - _SNAP:
        for c in range(d):
            out[c] = states[imax, c]
        return
    j = int(np.floor(u))
    th = u - j
    if th > 1.0 - _SNAP:
        j += 1
        th = 0.0
    if j < 0:
        j = 0
        th = 0.0
    if th < _SNAP:
        for c in range(d):
            out[c] = states[j, c]
        return
    h00 = 2.0 * th**3 - 3.0 * th**2 + 1.0
    h10 = th**3 - 2.0 * th**2 + th
    h01 = -2.0 * th**3 + 3.0 * th**2
    h11 = th**3 - th**2
    for c in range(d):
        out[c] = (
            h00 * states[j, c]
            + h10 * h * dright[j, c]
            + h01 * states[j + 1, c]
            + h11 * h * dleft[j + 1, c]
        )


@njit(cache=True)
def _field(exps, coeffs, y, row, c, n, h, cur_lag, del_lag, dormant_at,
           states, dright, dleft, imax, out, z, buf):
    d = y.shape[0]
    for k in range(d):
        sw = dormant_at[k]
        if sw > 0.0 and (n + 1.0 <= sw + _SNAP or n + c < sw - _SNAP):
            out[k] = 0.0
            continue
        if cur_lag[k] == 0.0:
            for m in range(d):
                z[m] = y[m]
        else:
            _lookup(row + c - cur_lag[k], imax, h, states, dright, dleft, buf)
            for m in range(d):
                z[m] = buf[m]
        if del_lag[k] == 0.0:
            for m in range(d):
                z[d + m] = z[m]
        else:
            _lookup(row + c - del_lag[k], imax, h, states, dright, dleft, buf)
            for m in range(d):
                z[d + m] = buf[m]
        acc = 0.0
        for j in range(exps.shape[0]):
            v = 1.0
            for m in range(2 * d):
                for _ in range(exps[j, m]):
                    v = v * z[m]
            acc = acc + coeffs[j, k] * v
        out[k] = acc


@njit(cache=True)
def _march(exps, coeffs, cur_lag, del_lag, dormant_at, states, dright, dleft,
           n_hist, h, n_steps, bound):
    """Advance rows ``n_hist .. n_hist + n_steps``; returns the last good row."""
    d = states.shape[1]
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    y = np.empty(d)
    z = np.empty(2 * d)
    buf = np.empty(d)
    for n in range(n_steps + 1):
        row = n_hist + n
        for m in range(d):
            y[m] = states[row, m]
        _field(exps, coeffs, y, row, 0.0, n, h, cur_lag, del_lag, dormant_at,
               states, dright, dleft, row - 1, k1, z, buf)
        for m in range(d):
            dright[row, m] = k1[m]
            if n > 0:
                sw = dormant_at[m]
                if sw > 0.0 and abs(n - sw) < _SNAP:
                    dleft[row, m] = 0.0
                else:
                    dleft[row, m] = k1[m]
        if n == n_steps:
            return row
        for m in range(d):
            y[m] = states[row, m] + 0.5 * h * k1[m]
        _field(exps, coeffs, y, row, 0.5, n, h, cur_lag, del_lag, dormant_at,
               states, dright, dleft, row, k2, z, buf)
        for m in range(d):
            y[m] = states[row, m] + 0.5 * h * k2[m]
        _field(exps, coeffs, y, row, 0.5, n, h, cur_lag, del_lag, dormant_at,
               states, dright, dleft, row, k3, z, buf)
        for m in range(d):
            y[m] = states[row, m] + h * k3[m]
        _field(exps, coeffs, y, row, 1.0, n, h, cur_lag, del_lag, dormant_at,
               states, dright, dleft, row, k4, z, buf)
        ok = True
        for m in range(d):
            v = states[row, m] + h / 6.0 * (k1[m] + 2.0 * k2[m] + 2.0 * k3[m] + k4[m])
            states[row + 1, m] = v
            if not (abs(v) <= bound):
                ok = False
        if not ok:
            return -row - 1
    return n_hist + n_steps


def _steps(lag: float, h: float) -> float:
    s = lag / h
    r = round(s)
    return float(r) if abs(s - r) <= _SNAP * max(1.0, abs(s)) else s


def integrate(model: DelayModel, history: HistorySpec, t0: float, t1: float,
              h: float, bound: float = DEFAULT_BOUND) -> Trajectory:
    """Integrate ``model`` from ``t0`` to (at least) ``t1`` with fixed step ``h``.

    The state at ``t0`` is taken from ``history``. Every positive lag must be
    at least ``h`` so delayed lookups only touch already computed rows.
    """
    if not t1 > t0:
        raise IntegrationError("t1 must exceed t0")
    if not h > 0:
        raise IntegrationError("step h must be positive")
    d = model.dim
    cur = model.shifts
    dly = model.shifts + (model.delays if model.spec.delayed else 0.0)
    lags = np.concatenate([cur, dly])
    positive = lags[lags > 0]
    if positive.size and h > positive.min() * (1 + 1e-12):
        raise IntegrationError(
            f"step {h} exceeds the smallest positive delay {positive.min()}"
        )
    cur_lag = np.array([_steps(v, h) for v in cur])
    del_lag = np.array([_steps(v, h) for v in dly])
    dormant_at = cur_lag.copy() if model.dormant else np.zeros(d)

    n_hist = int(np.ceil(max(lags.max(), 0.0) / h - _SNAP)) if lags.size else 0
    n_steps = int(np.ceil((t1 - t0) / h - _SNAP))
    rows = n_hist + n_steps + 1
    grid = t0 + (np.arange(rows) - n_hist) * h
    states = np.zeros((rows, d))
    dright = np.zeros((rows, d))
    dleft = np.zeros((rows, d))
    hv, hd = history.evaluate(grid[: n_hist + 1])
    if hv.shape[1] != d:
        raise IntegrationError(f"history has {hv.shape[1]} channels, model has {d}")
    states[: n_hist + 1] = hv
    dright[: n_hist + 1] = hd
    dleft[: n_hist + 1] = hd

    exps = exponent_matrix(model.terms)
    coeffs = np.ascontiguousarray(model.coeffs)
    last = _march(exps, coeffs, cur_lag, del_lag, dormant_at, states, dright, dleft,
                  n_hist, float(h), n_steps, float(bound))
    diverged = last < 0
    if diverged:
        # row -last-1 is the last finite row; its derivative is already stored
        last = -last - 1
    sl = slice(n_hist, last + 1)
    return Trajectory(grid[sl].copy(), states[sl].copy(), dright[sl].copy(),
                      dleft[sl].copy(), float(h), bool(diverged))


def sample(traj: Trajectory, times, with_derivs: bool = False):
    """Cubic Hermite interpolation of a trajectory at ``times``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    tol = _SNAP * traj.h
    if np.any(times < traj.t0 - tol) or np.any(times > traj.t_end + tol):
        raise IntegrationError(
            f"requested times outside trajectory span [{traj.t0}, {traj.t_end}]"
        )
    if traj.times.size == 1:
        vals = np.tile(traj.states[0], (times.size, 1))
        return (vals, np.tile(traj.derivs[0], (times.size, 1))) if with_derivs else vals
    return hermite(traj.times, traj.states, traj.derivs, traj.left_derivs,
                   np.clip(times, traj.t0, traj.t_end), with_derivs=with_derivs)


def find_periodic_history(model: DelayModel, burn_in: float, anchor_value: float,
                          h: float = 1e-2, bound: float = DEFAULT_BOUND) -> HistorySpec:
    """History on ``[-lag, 0]`` taken from the attractor, with ``x(0) = anchor_value``.

    Integrates from a constant history for ``burn_in`` time units, finds the
    last upward crossing of ``anchor_value`` and re-bases time there.
    """
    if model.dim != 1:
        raise IntegrationError("periodic history search needs a scalar model")
    lag = model.max_lag
    traj = integrate(model, HistorySpec.constant([anchor_value]), 0.0, burn_in, h, bound)
    if traj.diverged:
        raise IntegrationError("solution diverged during burn-in")
    x = traj.states[:, 0]
    if np.all(x == anchor_value):
        return HistorySpec.constant([anchor_value])
    ups = np.flatnonzero((x[:-1] < anchor_value) & (x[1:] >= anchor_value))
    ups = ups[traj.times[ups] >= traj.t0 + lag]
    if ups.size == 0:
        raise IntegrationError("no upward crossing of the anchor value after burn-in")
    j = ups[-1]
    a, b = traj.times[j], traj.times[j + 1]
    if x[j + 1] == anchor_value:
        tc = b
    else:
        tc = brentq(lambda t: sample(traj, [t])[0, 0] - anchor_value, a, b,
                    xtol=1e-14, rtol=4 * np.finfo(float).eps)
    n_hist = max(int(np.ceil(lag / h - _SNAP)), 1)
    offsets = (np.arange(n_hist + 1) - n_hist) * h
    vals, ders = sample(traj, tc + offsets, with_derivs=True)
    vals[-1] = anchor_value
    series = TimeSeries(offsets, vals, ders, {"crossing_time": float(tc)})
    return HistorySpec.sampled(series)


def write_trajectory_csv(traj: Trajectory, path, channels=None, times=None) -> None:
    """Export ``t,x1,...`` at the internal grid or at the requested ``times``."""
    if times is None:
        times, states = traj.times, traj.states
    else:
        times = np.asarray(times, dtype=float)
        states = sample(traj, times)
    d = states.shape[1]
    channels = channels or [f"x{k + 1}" for k in range(d)]
    with Path(path).open("w", newline="") as fh:
        if traj.diverged:
            fh.write(f"# diverged after t={traj.t_end:.17g}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *channels])
        for t, row in zip(times, states):
            writer.writerow([f"{t:.17g}", *(f"{v:.17g}" for v in row)])
