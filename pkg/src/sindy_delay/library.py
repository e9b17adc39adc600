"""Monomial libraries over current and delayed state channels."""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from math import comb

import numpy as np

from .denoise import SmootherSpec, evaluate_many
from .timeseries import DataError, TimeSeries

FULL = "full"
EXCLUDE_MIXED = "exclude-mixed"

# A term is its exponent vector: d current-channel exponents then d delayed ones.
TermId = tuple


@dataclass(frozen=True)
class LibrarySpec:
    dim: int
    max_degree: int
    delayed: bool = True
    cross_policy: str = EXCLUDE_MIXED

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.max_degree < 0:
            raise ValueError("max_degree must be nonnegative")
        if self.cross_policy not in (FULL, EXCLUDE_MIXED):
            raise ValueError(f"unknown cross_policy {self.cross_policy!r}")

    def expected_size(self) -> int:
        d, m = self.dim, self.max_degree
        if not self.delayed:
            return comb(d + m, m)
        if self.cross_policy == FULL:
            return comb(2 * d + m, m)
        return 2 * comb(d + m, m) - 1

    def terms(self) -> list[TermId]:
        return enumerate_terms(self)

    def to_dict(self) -> dict:
        return {
            "d": self.dim,
            "M": self.max_degree,
            "cross_policy": self.cross_policy,
            "delayed": self.delayed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LibrarySpec":
        return cls(int(data["d"]), int(data["M"]), bool(data["delayed"]), data["cross_policy"])


def enumerate_terms(spec: LibrarySpec) -> list[TermId]:
    """All admissible exponent vectors, by total degree then descending lex order."""
    d = spec.dim
    n_free = 2 * d if spec.delayed else d
    terms = []
    for exps in itertools.product(range(spec.max_degree + 1), repeat=n_free):
        if sum(exps) > spec.max_degree:
            continue
        term = tuple(exps) + (0,) * (2 * d - n_free)
        if spec.cross_policy == EXCLUDE_MIXED and any(term[:d]) and any(term[d:]):
            continue
        terms.append(term)
    terms.sort(key=lambda e: (sum(e), tuple(-v for v in e)))
    return terms


def exponent_matrix(terms) -> np.ndarray:
    return np.array(terms, dtype=np.int64).reshape(len(terms), -1)


def evaluate_terms(exponents: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Evaluate monomials on rows of ``z`` (``m x 2d``); returns ``m x n_terms``.

    Powers are formed by repeated multiplication, channel by channel, which
    is exact for small integers and matches the integrator's arithmetic.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    out = np.ones((z.shape[0], exponents.shape[0]))
    for j, row in enumerate(exponents):
        col = out[:, j]
        for c, e in enumerate(row):
            for _ in range(e):
                col = col * z[:, c]
        out[:, j] = col
    return out


def format_term(term: TermId, names=None) -> str:
    """Readable name such as ``x1^2`` or ``x1(t-tau)``; ``1`` for the constant."""
    d = len(term) // 2
    names = list(names) if names is not None else [f"x{k + 1}" for k in range(d)]
    parts = []
    for c, e in enumerate(term):
        if e == 0:
            continue
        base = names[c] if c < d else f"{names[c - d]}(t-tau)"
        parts.append(base if e == 1 else f"{base}^{e}")
    return "*".join(parts) if parts else "1"


def serialize_term(term: TermId) -> str:
    d = len(term) // 2
    cur = ",".join(str(e) for e in term[:d])
    dly = ",".join(str(e) for e in term[d:])
    return f"[{cur}|{dly}]"


_TERM_RE = re.compile(r"^\[([0-9,]*)\|([0-9,]*)\]$")


def parse_term(text: str) -> TermId:
    m = _TERM_RE.match(text.replace(" ", ""))
    if not m:
        raise ValueError(f"malformed term {text!r}")
    cur = [int(v) for v in m.group(1).split(",") if v]
    dly = [int(v) for v in m.group(2).split(",") if v]
    if len(cur) != len(dly):
        raise ValueError(f"term {text!r} has unequal current/delayed blocks")
    return tuple(cur + dly)


def _lookup(series: TimeSeries, smoother: SmootherSpec, t: np.ndarray, smooth: bool):
    """Series values at ``t``: raw samples on the grid, local polynomial elsewhere."""
    times = series.times
    span = times[-1] - times[0]
    typical = span / (series.n - 1)
    tol = 1e-9 * typical
    if np.any(t < times[0] - tol) or np.any(t > times[-1] + tol):
        bad = t[(t < times[0] - tol) | (t > times[-1] + tol)][0]
        raise DataError(
            f"row requires the series at t={bad!r}, outside [{times[0]}, {times[-1]}]"
        )
    idx = np.clip(np.searchsorted(times, t), 1, series.n - 1)
    idx = np.where(np.abs(times[idx - 1] - t) < np.abs(times[idx] - t), idx - 1, idx)
    on_grid = np.abs(times[idx] - t) <= tol
    out = np.empty((t.size, series.dim))
    out[on_grid] = series.values[idx[on_grid]]
    off = ~on_grid if not smooth else np.ones_like(on_grid)
    if np.any(off):
        out[off] = evaluate_many(series, smoother, np.clip(t[off], times[0], times[-1]))[0]
    return out


def build_library_matrix(
    series: TimeSeries,
    spec: LibrarySpec,
    delay: float,
    smoother: SmootherSpec,
    row_times,
    smooth: bool = False,
) -> np.ndarray:
    """Library matrix with one row per requested time and one column per term.

    Entry ``(n, j)`` is term ``j`` evaluated on ``(x(t_n), x(t_n - delay))``.
    With ``smooth`` set, on-grid samples are also replaced by polynomial values.
    """
    if series.dim != spec.dim:
        raise DataError(f"series has {series.dim} channels, library expects {spec.dim}")
    row_times = np.asarray(row_times, dtype=float).reshape(-1)
    current = _lookup(series, smoother, row_times, smooth)
    if spec.delayed:
        delayed = _lookup(series, smoother, row_times - delay, smooth)
    else:
        delayed = np.zeros_like(current)
    z = np.hstack([current, delayed])
    return evaluate_terms(exponent_matrix(enumerate_terms(spec)), z)


def delayed_row_times(series: TimeSeries, delay: float) -> np.ndarray:
    """Sample times whose delayed time does not precede the first observation."""
    span = series.times[-1] - series.times[0]
    tol = 1e-9 * span / (series.n - 1)
    return series.times[series.times - delay >= series.times[0] - tol]
