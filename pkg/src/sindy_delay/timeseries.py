"""Observation series: container, CSV ingestion and noise injection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Relative tolerance used when checking that sampling is uniform.
UNIFORM_RTOL = 1e-9


class DataError(ValueError):
    """Raised for malformed or invalid observation data."""


def _frozen(a, name):
    arr = np.array(a, dtype=float)
    if arr.ndim == 1 and name != "times":
        arr = arr[:, None]
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """Timestamped ``N x d`` observations with optional derivative estimates.

    ``values[n]`` is the observation at ``times[n]``. ``derivs``, when present,
    has the same shape as ``values``. ``meta`` carries free-form labels such as
    channel names, strain or seed.
    """

    times: np.ndarray
    values: np.ndarray
    derivs: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        times.setflags(write=False)
        values = _frozen(self.values, "values")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.derivs is not None:
            object.__setattr__(self, "derivs", _frozen(self.derivs, "derivs"))
        object.__setattr__(self, "meta", dict(self.meta))

        if values.ndim != 2:
            raise DataError(f"values must be a 2-D array, got shape {values.shape}")
        if times.size < 2:
            raise DataError(f"need at least 2 samples, got {times.size}")
        if values.shape[0] != times.size:
            raise DataError(
                f"values has {values.shape[0]} rows but there are {times.size} times"
            )
        if self.derivs is not None and self.derivs.shape != values.shape:
            raise DataError(
                f"derivs shape {self.derivs.shape} does not match values {values.shape}"
            )
        for name, arr in (("times", times), ("values", values), ("derivs", self.derivs)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite entries")
        bad = np.flatnonzero(np.diff(times) <= 0)
        if bad.size:
            raise DataError(f"non-increasing times at row {bad[0] + 1}")

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> list[str]:
        names = self.meta.get("channels")
        if names is None or len(names) != self.dim:
            return [f"x{k + 1}" for k in range(self.dim)]
        return list(names)

    def with_derivs(self, derivs) -> "TimeSeries":
        return TimeSeries(self.times, self.values, derivs, self.meta)

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(self.times, values, None, self.meta)

    def spacing(self) -> float:
        """Return the uniform sampling step, or raise if sampling is not uniform."""
        steps = np.diff(self.times)
        dt = (self.times[-1] - self.times[0]) / (self.n - 1)
        if np.max(np.abs(steps - dt)) > UNIFORM_RTOL * dt:
            raise DataError("operation requires uniformly sampled data")
        return float(dt)

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        if (self.derivs is None) != (other.derivs is None):
            return False
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
            and (self.derivs is None or np.array_equal(self.derivs, other.derivs))
            and self.meta == other.meta
        )

    __hash__ = None


@dataclass(frozen=True)
class NoiseSpec:
    """Isotropic Gaussian observation noise of scale ``gamma``."""

    gamma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


def load_csv(path) -> TimeSeries:
    """Read a ``t,<channel>,...`` CSV file.

    Lines starting with ``#`` are skipped. Errors name the offending line
    (1-based, counting comment lines) and column.
    """
    path = Path(path)
    header = None
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (row[0].lstrip().startswith("#")):
                continue
            if header is None:
                header = [c.strip() for c in row]
                if len(header) < 2 or header[0] != "t" or any(not c for c in header):
                    raise DataError(f"{path}: malformed header at line {lineno}: {row!r}")
                if len(set(header)) != len(header):
                    raise DataError(f"{path}: duplicate column names in header")
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {lineno} has {len(row)} cells, expected {len(header)}"
                )
            parsed = []
            for col, cell in enumerate(row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at line {lineno}, "
                        f"column {col + 1} ({header[col]})"
                    ) from None
            rows.append(parsed)
    if header is None:
        raise DataError(f"{path}: missing header")
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {len(rows)}")
    data = np.array(rows)
    steps = np.diff(data[:, 0])
    bad = np.flatnonzero(~(steps > 0))
    if bad.size:
        raise DataError(f"{path}: non-increasing times at row {bad[0] + 2}")
    return TimeSeries(data[:, 0], data[:, 1:], meta={"channels": header[1:]})


def write_csv(series: TimeSeries, path, comment: str | None = None) -> None:
    """Write ``series`` as CSV at 17 significant digits (round-trips doubles)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *series.channels])
        for t, row in zip(series.times, series.values):
            writer.writerow([f"{t:.17g}", *(f"{v:.17g}" for v in row)])


def add_noise(series: TimeSeries, noise: NoiseSpec) -> TimeSeries:
    """Return ``values + gamma * eta`` with ``eta`` i.i.d. standard normal.

    ``eta`` is drawn row-major from ``numpy.random.Generator(PCG64(seed))``,
    whose standard-normal stream is stable under NumPy's RNG compatibility
    policy. Derivative estimates are dropped.
    """
    rng = np.random.Generator(np.random.PCG64(int(noise.seed)))
    eta = rng.standard_normal(series.values.shape)
    meta = {**series.meta, "noise_gamma": noise.gamma, "noise_seed": int(noise.seed)}
    return TimeSeries(series.times, series.values + noise.gamma * eta, None, meta)


def shift_to_zero(series: TimeSeries) -> TimeSeries:
    """Re-base times and each value column so the first row is ``(0, 0, ...)``."""
    derivs = series.derivs
    return TimeSeries(
        series.times - series.times[0],
        series.values - series.values[0],
        derivs,
        series.meta,
    )
