"""Parameter-space Gaussians and their induced trajectory distributions.

Because trajectories are linear-affine in the movement-primitive parameters,
a Gaussian over parameters induces a Gaussian over positions at any set of
grid times: mean via the same affine map, covariance by conjugating the
parameter covariance with the parameter-to-position map, plus isotropic
observation noise on the diagonal. Likelihoods over a trajectory are the
average of the log densities of small time-pair segments, which keeps
time-correlation inside each segment while staying cheap.

Vector layout for multi-time marginals is DoF-major: all selected times of
DoF 0, then DoF 1, and so on. For a time pair this is
[d0@t, d0@t', d1@t, d1@t', ...].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mp import MpKernel, Trajectory

DEFAULT_NOISE_STD = 1e-2

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NoiseModel:
    """Isotropic observation noise added to every trajectory marginal."""

    noise_std: float = DEFAULT_NOISE_STD

    def __post_init__(self):
        if not (self.noise_std > 0):
            raise ValueError("noise_std must be positive")

    @property
    def variance(self) -> float:
        return self.noise_std * self.noise_std


@dataclass(frozen=True)
class ParamGaussian:
    """Gaussian over the flat parameter vector, kept in Cholesky form."""

    mean: np.ndarray   # (m,)
    chol: np.ndarray   # (m, m) lower triangular, positive diagonal

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        chol = np.asarray(self.chol, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "chol", chol)
        m = mean.shape[0]
        if mean.ndim != 1 or chol.shape != (m, m):
            raise ValueError("mean must be (m,), chol must be (m, m)")
        if not np.allclose(chol, np.tril(chol)):
            raise ValueError("chol must be lower triangular")
        if np.any(np.diag(chol) <= 0):
            raise ValueError("chol must have a positive diagonal")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def cov(self) -> np.ndarray:
        return self.chol @ self.chol.T


@dataclass(frozen=True)
class SegmentDistribution:
    """Gaussian over the positions of both times of one segment pair."""

    time_pair: tuple[int, int]
    mean: np.ndarray   # (2 * num_dof,)
    cov: np.ndarray    # (2 * num_dof, 2 * num_dof)


def sample(pg: ParamGaussian, rng, size: int | None = None) -> np.ndarray:
    """Draw parameter vectors; rng is a seed or a numpy Generator.

    Returns (m,) for size=None, else (size, m).
    """
    gen = np.random.default_rng(rng)
    if size is None:
        return pg.mean + pg.chol @ gen.standard_normal(pg.dim)
    return pg.mean + gen.standard_normal((size, pg.dim)) @ pg.chol.T


def param_log_pdf(pg: ParamGaussian, params: np.ndarray) -> float:
    """Log density of a parameter vector under the parameter Gaussian."""
    z = _solve_lower(pg.chol, np.asarray(params, dtype=np.float64) - pg.mean)
    logdet = 2.0 * np.sum(np.log(np.diag(pg.chol)))
    return float(-0.5 * (z @ z + logdet + pg.dim * _LOG_2PI))


def entropy(pg: ParamGaussian) -> float:
    """Differential entropy of the parameter Gaussian."""
    return float(0.5 * pg.dim * (1.0 + _LOG_2PI)
                 + np.sum(np.log(np.diag(pg.chol))))


def gauss_kl(p: ParamGaussian, q: ParamGaussian) -> float:
    """KL(p || q) in closed form from the Cholesky factors."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    m = p.dim
    a = _solve_lower_matrix(q.chol, p.chol)          # q_chol^{-1} p_chol
    trace = np.sum(a * a)
    diff = _solve_lower(q.chol, q.mean - p.mean)
    quad = diff @ diff
    logdet = 2.0 * (np.sum(np.log(np.diag(q.chol)))
                    - np.sum(np.log(np.diag(p.chol))))
    return float(0.5 * (trace + quad - m + logdet))


def segment_basis(kernel: MpKernel, pairs: np.ndarray) -> np.ndarray:
    """Dense parameter-to-segment maps H, shape (K, m, 2 * num_dof).

    Column 2d + j of H[k] holds the parameter weights producing DoF d's
    position at the j-th time of pair k; rows outside DoF d's block are
    zero because each DoF has its own parameters.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    D = kernel.num_dof
    P = kernel.config.num_params_per_dof
    K = pairs.shape[0]
    H = np.zeros((K, D * P, 2 * D))
    for k in range(K):
        cols = kernel.pos_map[:, pairs[k]]           # (P, 2)
        for d in range(D):
            H[k, d * P:(d + 1) * P, 2 * d] = cols[:, 0]
            H[k, d * P:(d + 1) * P, 2 * d + 1] = cols[:, 1]
    return H


def segment_mean_offset(kernel: MpKernel, pairs: np.ndarray,
                        boundary_pos: np.ndarray,
                        boundary_vel: np.ndarray) -> np.ndarray:
    """Boundary-state contribution to segment means, shape (K, 2 * num_dof)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    bp = np.asarray(boundary_pos, dtype=np.float64)
    bv = np.asarray(boundary_vel, dtype=np.float64)
    xi1 = kernel.xi1[pairs]                          # (K, 2)
    xi2 = kernel.xi2[pairs]
    # offset[k, 2d + j] = xi1[k, j] bp[d] + xi2[k, j] bv[d]
    off = xi1[:, None, :] * bp[None, :, None] + xi2[:, None, :] * bv[None, :, None]
    K = pairs.shape[0]
    return off.reshape(K, -1)


def segment_distribution(kernel: MpKernel, pg: ParamGaussian,
                         boundary_pos: np.ndarray, boundary_vel: np.ndarray,
                         time_pair, noise: NoiseModel = NoiseModel(),
                         ) -> SegmentDistribution:
    """Exact Gaussian over the positions at one time pair."""
    t0, t1 = int(time_pair[0]), int(time_pair[1])
    n_times = kernel.times.shape[0]
    if not (0 <= t0 < n_times and 0 <= t1 < n_times):
        raise ValueError("time pair outside the kernel grid")
    if pg.dim != kernel.num_params:
        raise ValueError("parameter dimension mismatch with kernel")
    pair = np.array([[t0, t1]])
    H = segment_basis(kernel, pair)[0]               # (m, q)
    offset = segment_mean_offset(kernel, pair, boundary_pos, boundary_vel)[0]
    mean = offset + H.T @ pg.mean
    half = H.T @ pg.chol                             # (q, m)
    cov = half @ half.T
    cov[np.diag_indices_from(cov)] += noise.variance
    return SegmentDistribution(time_pair=(t0, t1), mean=mean, cov=cov)


def log_pdf(dist: SegmentDistribution, observed: np.ndarray) -> float:
    """Log density of observed segment positions (DoF-major layout)."""
    observed = np.asarray(observed, dtype=np.float64)
    if observed.shape != dist.mean.shape:
        raise ValueError("observed shape mismatch")
    chol = np.linalg.cholesky(dist.cov)
    z = _solve_lower(chol, observed - dist.mean)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    q = dist.mean.shape[0]
    return float(-0.5 * (z @ z + logdet + q * _LOG_2PI))


def trajectory_log_likelihood(kernel: MpKernel, pg: ParamGaussian,
                              boundary_pos: np.ndarray,
                              boundary_vel: np.ndarray,
                              pairs: np.ndarray, traj: Trajectory,
                              noise: NoiseModel = NoiseModel()) -> float:
    """Average segment log density of a trajectory's positions.

    pairs: (K, 2) grid indices. The observed vector of each pair is the
    trajectory's positions at those indices in DoF-major layout.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    total = 0.0
    for k in range(pairs.shape[0]):
        dist = segment_distribution(kernel, pg, boundary_pos, boundary_vel,
                                    pairs[k], noise)
        observed = traj.pos[:, pairs[k]].reshape(-1)
        total += log_pdf(dist, observed)
    return total / pairs.shape[0]


def marginal_distribution(kernel: MpKernel, pg: ParamGaussian,
                          boundary_pos: np.ndarray, boundary_vel: np.ndarray,
                          time_indices, noise: NoiseModel | None = None,
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Joint Gaussian over positions at arbitrary grid times.

    Returns (mean, cov) over len(time_indices) * num_dof entries in
    DoF-major layout. noise=None omits the observation-noise diagonal
    (useful for structural covariance checks).
    """
    idx = np.asarray(time_indices, dtype=np.int64)
    D = kernel.num_dof
    P = kernel.config.num_params_per_dof
    n = idx.shape[0]
    cols = kernel.pos_map[:, idx]                    # (P, n)
    H = np.zeros((D * P, D * n))
    for d in range(D):
        H[d * P:(d + 1) * P, d * n:(d + 1) * n] = cols
    bp = np.asarray(boundary_pos, dtype=np.float64)
    bv = np.asarray(boundary_vel, dtype=np.float64)
    offset = (np.outer(bp, kernel.xi1[idx])
              + np.outer(bv, kernel.xi2[idx])).reshape(-1)
    mean = offset + H.T @ pg.mean
    half = H.T @ pg.chol
    cov = half @ half.T
    if noise is not None:
        cov[np.diag_indices_from(cov)] += noise.variance
    return mean, cov


def batched_gauss_logpdf(means: np.ndarray, chols: np.ndarray,
                         x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log densities and mean-gradients for a batch of full Gaussians.

    means, x: (B, m); chols: (B, m, m) lower factors. Returns
    (ll (B,), alpha (B, m)) with alpha = Sigma^{-1} (x - mean), which is
    both the gradient of ll w.r.t. x and minus its gradient w.r.t. mean.
    """
    resid = x - means
    cov = chols @ np.swapaxes(chols, -1, -2)
    alpha = np.linalg.solve(cov, resid[..., None])[..., 0]
    quad = np.einsum("bm,bm->b", resid, alpha)
    logdet = 2.0 * np.sum(
        np.log(np.diagonal(chols, axis1=-2, axis2=-1)), axis=-1)
    m = means.shape[1]
    ll = -0.5 * (quad + logdet + m * _LOG_2PI)
    return ll, alpha


def _solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    # forward substitution; small systems, clarity over BLAS dispatch
    n = L.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = (b[i] - L[i, :i] @ out[:i]) / L[i, i]
    return out


def _solve_lower_matrix(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = L.shape[0]
    out = np.empty_like(B, dtype=np.float64)
    for i in range(n):
        out[i] = (B[i] - L[i, :i] @ out[:i]) / L[i, i]
    return out
