"""Masked least squares and greedy backward elimination of library terms."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

BASELINE = "baseline"
PREVIOUS = "previous"


def masked_least_squares(theta, target, mask):
    """Least squares restricted to the active columns of ``theta``.

    Returns ``(coeffs, cost)`` where ``cost`` is the squared residual norm and
    inactive coefficients are exactly zero. Columns are equilibrated before the
    solve; rank-deficient systems get the minimum-norm solution in the scaled
    coordinates and a log message.
    """
    theta = np.asarray(theta, dtype=float)
    target = np.asarray(target, dtype=float).reshape(-1)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if theta.ndim != 2 or theta.shape[0] != target.size:
        raise ValueError(
            f"theta has shape {theta.shape} but target has length {target.size}"
        )
    if mask.size != theta.shape[1]:
        raise ValueError(f"mask length {mask.size} != {theta.shape[1]} library terms")

    coeffs = np.zeros(theta.shape[1])
    cols = np.flatnonzero(mask)
    if cols.size:
        sub = theta[:, cols]
        norms = np.linalg.norm(sub, axis=0)
        live = norms > 0
        if np.any(live):
            scaled = sub[:, live] / norms[live]
            sol, _, rank, _ = np.linalg.lstsq(scaled, target, rcond=None)
            if rank < scaled.shape[1]:
                log.debug("rank-deficient active set (%d of %d)", rank, scaled.shape[1])
            coeffs[cols[live]] = sol / norms[live]
    resid = target - theta @ coeffs
    return coeffs, float(resid @ resid)


@dataclass
class FitTrace:
    """Greedy elimination history for one target.

    ``steps[i]`` is ``(term_index, cost, cost / c_zero)`` after the ``i+1``-th
    elimination. The first ``stopped_at`` steps were accepted.
    """

    c_full: float
    c_zero: float
    steps: list = field(default_factory=list)
    stopped_at: int = 0

    @property
    def normalized_full(self) -> float:
        return self.c_full / self.c_zero if self.c_zero > 0 else 0.0

    @property
    def eliminated(self) -> list[int]:
        return [q for q, _, _ in self.steps[: self.stopped_at]]

    @property
    def plateau(self) -> float:
        """Normalized cost of the accepted model."""
        if self.stopped_at == 0:
            return self.normalized_full
        return self.steps[self.stopped_at - 1][2]

    def to_dict(self) -> dict:
        return {
            "c_full": self.c_full,
            "c_zero": self.c_zero,
            "stopped_at": self.stopped_at,
            "steps": [[int(q), c, r] for q, c, r in self.steps],
        }


def greedy_eliminate(theta, target, stop_increase=0.10, mode=BASELINE):
    """Remove terms one at a time, each time the one whose loss raises the cost least.

    The whole elimination path down to the empty model is recorded in the
    trace. The returned model is the last state before the normalized cost
    ``C / C(0)`` rises more than ``stop_increase`` above the all-active value
    (``mode="baseline"``) or above the previous step (``mode="previous"``).
    Ties go to the lowest term index.

    Returns ``(coeffs, mask, trace)``.
    """
    theta = np.asarray(theta, dtype=float)
    target = np.asarray(target, dtype=float).reshape(-1)
    if theta.ndim != 2 or theta.shape[1] == 0 or theta.shape[0] == 0:
        raise ValueError("theta must be a nonempty 2-D array")
    if mode not in (BASELINE, PREVIOUS):
        raise ValueError(f"unknown stopping mode {mode!r}")
    n_terms = theta.shape[1]
    c_zero = float(target @ target)
    if c_zero == 0.0:
        return np.zeros(n_terms), np.zeros(n_terms, dtype=bool), FitTrace(0.0, 0.0)

    active = np.ones(n_terms, dtype=bool)
    coeffs, c_full = masked_least_squares(theta, target, active)
    trace = FitTrace(c_full=c_full, c_zero=c_zero)
    states = [(active.copy(), coeffs)]
    while active.any():
        best_q, best_cost, best_coeffs = -1, np.inf, None
        for q in np.flatnonzero(active):
            trial = active.copy()
            trial[q] = False
            c, cost = masked_least_squares(theta, target, trial)
            if cost < best_cost:
                best_q, best_cost, best_coeffs = int(q), cost, c
        active[best_q] = False
        trace.steps.append((best_q, best_cost, best_cost / c_zero))
        states.append((active.copy(), best_coeffs))

    reference = trace.normalized_full
    for i, (_, _, normalized) in enumerate(trace.steps):
        if normalized - reference > stop_increase:
            break
        trace.stopped_at = i + 1
        if mode == PREVIOUS:
            reference = normalized
    mask, coeffs = states[trace.stopped_at]
    return coeffs, mask, trace


def write_trace_csv(trace: FitTrace, path, term_names=None) -> None:
    """Write ``step,term,cost,normalized_cost``; step 0 is the all-active model."""
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# stopped_at={trace.stopped_at} c_zero={trace.c_zero:.17g}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "term", "cost", "normalized_cost"])
        writer.writerow([0, "", f"{trace.c_full:.17g}", f"{trace.normalized_full:.17g}"])
        for i, (q, cost, normalized) in enumerate(trace.steps, start=1):
            name = term_names[q] if term_names is not None else str(q)
            writer.writerow([i, name, f"{cost:.17g}", f"{normalized:.17g}"])
