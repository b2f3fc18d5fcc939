"""Per-state trust-region projections for Gaussian policies.

Each predicted Gaussian is pulled back toward the previous iteration's
prediction for the same state whenever it drifts too far: means are
measured by squared Mahalanobis distance under the old covariance and
rescaled along the difference vector; covariances are measured by squared
Frobenius distance and blended convexly with the old covariance. Both
projections have closed forms, land exactly on the bound when active,
and are differentiable away from the activation boundary; the VJPs here
propagate gradients through both branches.

Activation uses a hair of relative slack (_BOUNDARY_SLACK) so that a
projected output, whose recomputed dissimilarity equals the bound only up
to rounding, is recognized as feasible and returned unchanged — this is
what makes the projection idempotent in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import ParamGaussian

_BOUNDARY_SLACK = 1e-9


@dataclass(frozen=True)
class TrustRegionBounds:
    """Per-state bounds on mean and covariance drift plus the weight of
    the penalty that regresses raw predictions onto projected ones."""

    eps_mean: float
    eps_cov: float
    reg_weight: float = 0.0

    def __post_init__(self):
        if not (self.eps_mean > 0):
            raise ValueError("eps_mean must be positive")
        if not (self.eps_cov > 0):
            raise ValueError("eps_cov must be positive")
        if not (self.reg_weight >= 0):
            raise ValueError("reg_weight must be nonnegative")


@dataclass
class MeanProjection:
    """Batched mean projection with the intermediates its VJP reuses."""

    projected: np.ndarray     # (E, m)
    delta: np.ndarray         # (E, m) mu_new - mu_old
    prec_delta: np.ndarray    # (E, m) Sigma_old^{-1} delta
    d: np.ndarray             # (E,) squared Mahalanobis distance
    active: np.ndarray        # (E,) bool
    eps: float


@dataclass
class CovProjection:
    """Batched covariance projection with VJP intermediates."""

    projected: np.ndarray     # (E, m, m)
    delta: np.ndarray         # (E, m, m) Sigma_new - Sigma_old
    d: np.ndarray             # (E,) squared Frobenius distance
    eta: np.ndarray           # (E,) blend factor, 1 where inactive
    active: np.ndarray        # (E,) bool
    eps: float


def project_mean_batch(mu_new: np.ndarray, mu_old: np.ndarray,
                       chol_old: np.ndarray, eps_mean: float,
                       ) -> MeanProjection:
    mu_new = np.asarray(mu_new, dtype=np.float64)
    delta = mu_new - mu_old
    cov_old = chol_old @ np.swapaxes(chol_old, -1, -2)
    z = np.linalg.solve(chol_old, delta[..., None])[..., 0]
    d = np.einsum("em,em->e", z, z)
    prec_delta = np.linalg.solve(cov_old, delta[..., None])[..., 0]
    active = d > eps_mean * (1.0 + _BOUNDARY_SLACK)
    scale = np.ones_like(d)
    scale[active] = np.sqrt(eps_mean / d[active])
    projected = np.where(active[:, None], mu_old + scale[:, None] * delta,
                         mu_new)
    return MeanProjection(projected=projected, delta=delta,
                          prec_delta=prec_delta, d=d, active=active,
                          eps=eps_mean)


def mean_projection_vjp(proj: MeanProjection, g: np.ndarray) -> np.ndarray:
    """Pull a gradient on the projected means back to the raw means."""
    g = np.asarray(g, dtype=np.float64)
    out = g.copy()
    act = proj.active
    if np.any(act):
        d = proj.d[act]
        s = np.sqrt(proj.eps / d)
        g_dot_delta = np.einsum("em,em->e", g[act], proj.delta[act])
        coeff = g_dot_delta * (-np.sqrt(proj.eps) * d ** -1.5)
        out[act] = s[:, None] * g[act] + coeff[:, None] * proj.prec_delta[act]
    return out


def project_cov_batch(cov_new: np.ndarray, cov_old: np.ndarray,
                      eps_cov: float) -> CovProjection:
    cov_new = np.asarray(cov_new, dtype=np.float64)
    delta = cov_new - cov_old
    d = np.einsum("eij,eij->e", delta, delta)
    active = d > eps_cov * (1.0 + _BOUNDARY_SLACK)
    eta = np.ones_like(d)
    eta[active] = np.sqrt(eps_cov / d[active])
    projected = np.where(active[:, None, None],
                         cov_old + eta[:, None, None] * delta, cov_new)
    return CovProjection(projected=projected, delta=delta, d=d, eta=eta,
                         active=active, eps=eps_cov)


def cov_projection_vjp(proj: CovProjection, g: np.ndarray) -> np.ndarray:
    """Pull a gradient on the projected covariances back to the raw ones."""
    g = np.asarray(g, dtype=np.float64)
    out = g.copy()
    act = proj.active
    if np.any(act):
        d = proj.d[act]
        inner = np.einsum("eij,eij->e", g[act], proj.delta[act])
        coeff = inner * (-np.sqrt(proj.eps) * d ** -1.5)
        out[act] = (proj.eta[act][:, None, None] * g[act]
                    + coeff[:, None, None] * proj.delta[act])
    return out


def project_mean(mu_new: np.ndarray, mu_old: np.ndarray,
                 chol_old: np.ndarray, eps_mean: float) -> np.ndarray:
    """Single-instance mean projection; feasible inputs pass through
    unchanged (same array)."""
    mu_new = np.asarray(mu_new, dtype=np.float64)
    proj = project_mean_batch(mu_new[None], np.asarray(mu_old)[None],
                              np.asarray(chol_old)[None], eps_mean)
    return mu_new if not proj.active[0] else proj.projected[0]


def project_cov(chol_new: np.ndarray, chol_old: np.ndarray,
                eps_cov: float) -> np.ndarray:
    """Single-instance covariance projection on Cholesky factors.

    Works in covariance space and re-factorizes when the bound is active;
    raises np.linalg.LinAlgError if the blended matrix fails to factor.
    """
    chol_new = np.asarray(chol_new, dtype=np.float64)
    cov_new = chol_new @ chol_new.T
    chol_old = np.asarray(chol_old, dtype=np.float64)
    cov_old = chol_old @ chol_old.T
    proj = project_cov_batch(cov_new[None], cov_old[None], eps_cov)
    if not proj.active[0]:
        return chol_new
    return np.linalg.cholesky(proj.projected[0])


def mean_dissimilarity(mu_new: np.ndarray, mu_old: np.ndarray,
                       chol_old: np.ndarray) -> float:
    delta = np.asarray(mu_new, dtype=np.float64) - mu_old
    z = np.linalg.solve(np.asarray(chol_old, dtype=np.float64), delta)
    return float(z @ z)


def cov_dissimilarity(cov_new: np.ndarray, cov_old: np.ndarray) -> float:
    delta = np.asarray(cov_new, dtype=np.float64) - cov_old
    return float(np.sum(delta * delta))


def trust_region_penalty(raw: ParamGaussian, projected: ParamGaussian,
                         reg_weight: float) -> float:
    """Squared drift of the raw prediction from its projection."""
    if reg_weight == 0.0:
        return 0.0
    d_mean = raw.mean - projected.mean
    d_cov = raw.cov - projected.cov
    return float(reg_weight * (d_mean @ d_mean + np.sum(d_cov * d_cov)))
