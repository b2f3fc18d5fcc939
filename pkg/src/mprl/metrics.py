"""Trajectory smoothness metrics and run-score aggregation.

Smoothness is summarized by three jerk statistics (peak norm, time-averaged
squared norm, and a dimensionless form normalized by duration and travel
amplitude so it compares across speeds and scales). Run scores aggregate
via the interquartile mean with stratified-bootstrap confidence intervals:
runs are resampled within each task so task identity never leaks across
strata.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mp import Trajectory, finite_diff_derivatives


@dataclass(frozen=True)
class SmoothnessReport:
    max_jerk: float
    mean_sq_jerk: float
    dimensionless_jerk: float


@dataclass(frozen=True)
class IqmResult:
    point: float
    ci_low: float
    ci_high: float
    n_runs: int
    n_bootstrap: int


def jerk_metrics(traj: Trajectory) -> SmoothnessReport:
    """Jerk statistics of a sampled trajectory.

    dimensionless_jerk = duration^5 / amplitude^2 * integral ||jerk||^2 dt,
    with amplitude the Euclidean norm of the per-DoF peak-to-peak ranges;
    a constant trajectory has zero amplitude and, by convention, zero
    dimensionless jerk (its jerk is zero as well).
    """
    if traj.num_samples < 5:
        raise ValueError("need at least 5 samples for jerk metrics")
    jerk = finite_diff_derivatives(traj, 3)
    sq_norm = np.sum(jerk * jerk, axis=0)
    max_jerk = float(np.sqrt(sq_norm.max()))
    mean_sq = float(sq_norm.mean())
    amplitude_sq = float(np.sum(np.ptp(traj.pos, axis=1) ** 2))
    if amplitude_sq == 0.0:
        dimensionless = 0.0
    else:
        integral = float(np.trapezoid(sq_norm, dx=traj.dt))
        dimensionless = traj.duration ** 5 / amplitude_sq * integral
    return SmoothnessReport(max_jerk=max_jerk, mean_sq_jerk=mean_sq,
                            dimensionless_jerk=dimensionless)


def iqm(values) -> float:
    """Interquartile mean: drop floor(n/4) values from each tail, average
    the rest."""
    values = np.asarray(values, dtype=np.float64).ravel()
    n = values.size
    if n == 0:
        raise ValueError("iqm of an empty sequence")
    k = n // 4
    kept = np.sort(values)[k:n - k]
    return float(kept.mean())


def _iqm_rows(matrix: np.ndarray) -> np.ndarray:
    n = matrix.shape[1]
    k = n // 4
    return np.sort(matrix, axis=1)[:, k:n - k].mean(axis=1)


def stratified_bootstrap_ci(per_task_runs, n_boot: int = 2000,
                            seed: int = 0) -> IqmResult:
    """IQM of all run scores with a 95% stratified bootstrap interval.

    per_task_runs maps task name -> sequence of per-run scores. Each
    replicate resamples runs with replacement inside every task, pools
    them, and recomputes the IQM; the interval is the 2.5/97.5 percentile
    band, widened if needed so it contains the point estimate.
    """
    if not per_task_runs:
        raise ValueError("no tasks given")
    if n_boot < 1:
        raise ValueError("n_boot must be positive")
    groups = []
    for task, runs in per_task_runs.items():
        scores = np.asarray(runs, dtype=np.float64).ravel()
        if scores.size == 0:
            raise ValueError(f"task {task!r} has no runs")
        groups.append(scores)
    pooled = np.concatenate(groups)
    point = iqm(pooled)
    rng = np.random.default_rng(seed)
    replicates = np.empty((n_boot, pooled.size))
    col = 0
    for scores in groups:
        n = scores.size
        idx = rng.integers(0, n, size=(n_boot, n))
        replicates[:, col:col + n] = scores[idx]
        col += n
    boot = _iqm_rows(replicates)
    ci_low, ci_high = np.percentile(boot, [2.5, 97.5])
    return IqmResult(point=point, ci_low=float(min(ci_low, point)),
                     ci_high=float(max(ci_high, point)),
                     n_runs=int(pooled.size), n_bootstrap=int(n_boot))
