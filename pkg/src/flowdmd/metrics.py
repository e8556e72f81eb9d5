"""Trajectory reconstruction error metrics and CSV reports.

All three metrics run over steps t = 1..T; the initial state is excluded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ZeroReferenceError


def _pair(xhat, x):
    xhat = np.asarray(xhat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if xhat.shape != x.shape:
        raise ShapeError(f"shape mismatch: {xhat.shape} vs {x.shape}")
    return xhat, x


def rl2e(xhat, x) -> float:
    """Relative L2 error of one state vector."""
    xhat, x = _pair(xhat, x)
    ref = np.linalg.norm(x)
    if ref == 0.0:
        raise ZeroReferenceError("reference state has zero norm")
    return float(np.linalg.norm(xhat - x) / ref)


def mse(xhat, x) -> float:
    """Squared L2 error of one state vector divided by its dimension."""
    xhat, x = _pair(xhat, x)
    return float(np.sum((xhat - x) ** 2) / x.size)


def trl2e(trajectory_hat, trajectory) -> float:
    """Total relative L2 error over a trajectory, skipping the initial row."""
    xhat, x = _pair(trajectory_hat, trajectory)
    if xhat.ndim != 2 or xhat.shape[0] < 2:
        raise ShapeError("need (T+1, m) trajectories with T >= 1")
    num = np.sum((xhat[1:] - x[1:]) ** 2)
    den = np.sum(x[1:] ** 2)
    if den == 0.0:
        raise ZeroReferenceError("reference trajectory has zero norm")
    return float(np.sqrt(num / den))


@dataclass
class ErrorReport:
    """Per-step relative and squared errors plus the trajectory total."""

    sample_id: int
    method: str
    rl2e: np.ndarray
    mse: np.ndarray
    trl2e: float


def error_report(trajectory_hat, trajectory, sample_id: int, method: str) -> ErrorReport:
    xhat, x = _pair(trajectory_hat, trajectory)
    steps = xhat.shape[0] - 1
    per_rl2e = np.array([rl2e(xhat[t], x[t]) for t in range(1, steps + 1)])
    per_mse = np.array([mse(xhat[t], x[t]) for t in range(1, steps + 1)])
    return ErrorReport(
        sample_id=sample_id,
        method=method,
        rl2e=per_rl2e,
        mse=per_mse,
        trl2e=trl2e(xhat, x),
    )


def write_report_csv(reports, path) -> None:
    """Per-step rows: sample_id, method, t, rl2e, mse."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "method", "t", "rl2e", "mse"])
        for rep in reports:
            for i, (r, m) in enumerate(zip(rep.rl2e, rep.mse)):
                writer.writerow([rep.sample_id, rep.method, i + 1, repr(float(r)), repr(float(m))])


def write_summary_csv(reports, path) -> None:
    """One row per (sample, method): sample_id, method, trl2e."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "method", "trl2e"])
        for rep in reports:
            writer.writerow([rep.sample_id, rep.method, repr(float(rep.trl2e))])
