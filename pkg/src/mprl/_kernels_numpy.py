"""Pure-numpy kernel implementations.

Reference twin of _kernels_numba. Same signatures, same arithmetic order
where bit-exactness is contractual (tracking_rollout, gae_batch). The
Gaussian kernels use numpy's batched LAPACK routines and agree with the
numba versions to rounding error.

All arrays are float64. Inputs must be finite; callers screen for NaN/inf
before invoking (the Gaussian kernels assume positive-definite covariances).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"

_LOG_2PI = float(np.log(2.0 * np.pi))


def tracking_rollout(pos0, vel0, target_pos, target_vel, kp, kd, a_max, dt):
    """Closed-loop PD tracking of a waypoint sequence on a double integrator.

    Parameters
    ----------
    pos0, vel0 : (D,) initial state.
    target_pos, target_vel : (T, D) per-step targets (the waypoint each step
        drives toward).
    kp, kd, a_max, dt : controller gains, acceleration clip, step size.

    Returns
    -------
    pos, vel : (T+1, D) state sequence including the initial state.
    acc : (T, D) clipped accelerations actually applied.
    """
    T, D = target_pos.shape
    pos = np.empty((T + 1, D))
    vel = np.empty((T + 1, D))
    acc = np.empty((T, D))
    p = pos0.astype(np.float64, copy=True)
    v = vel0.astype(np.float64, copy=True)
    pos[0] = p
    vel[0] = v
    for t in range(T):
        a = kp * (target_pos[t] - p) + kd * (target_vel[t] - v)
        a = np.clip(a, -a_max, a_max)
        p = p + v * dt + 0.5 * a * dt * dt
        v = v + a * dt
        acc[t] = a
        pos[t + 1] = p
        vel[t + 1] = v
    return pos, vel, acc


def gae_batch(rewards, values, gamma, lam):
    """Generalized-advantage recursion over a batch of equal-length episodes.

    rewards : (E, T), values : (E, T+1) with the terminal value included.
    Returns advantages (E, T).
    """
    E, T = rewards.shape
    adv = np.empty((E, T))
    carry = np.zeros(E)
    for t in range(T - 1, -1, -1):
        delta = rewards[:, t] + gamma * values[:, t + 1] - values[:, t]
        carry = delta + gamma * lam * carry
        adv[:, t] = carry
    return adv


def segment_gauss_forward(hmat, mu, cov, base_mean, observed, noise_var):
    """Segment Gaussian moments and log-densities for a batch.

    For episode e and segment k the segment distribution is

        mean_ek = base_mean[e, k] + hmat[k].T @ mu[e]
        S_ek    = hmat[k].T @ cov[e] @ hmat[k] + noise_var * I

    and the return values are the log-density of observed[e, k] under it
    plus the quantities its gradient needs.

    Parameters
    ----------
    hmat : (K, m, q) parameter-to-segment maps.
    mu : (E, m), cov : (E, m, m) parameter-space Gaussians.
    base_mean : (E, K, q) state-dependent mean offsets.
    observed : (E, K, q) observed segment values.
    noise_var : observation noise variance added to the diagonal.

    Returns
    -------
    ll : (E, K) log densities.
    alpha : (E, K, q) solves S^{-1} (observed - mean).
    prec : (E, K, q, q) inverses S^{-1}.
    """
    E, m = mu.shape
    K, _, q = hmat.shape
    means = base_mean + np.einsum("kmq,em->ekq", hmat, mu)
    covs = np.einsum("kmq,emn,knr->ekqr", hmat, cov, hmat)
    covs[..., np.arange(q), np.arange(q)] += noise_var
    chol = np.linalg.cholesky(covs)
    resid = observed - means
    prec = np.linalg.inv(covs)
    alpha = np.einsum("ekqr,ekr->ekq", prec, resid)
    quad = np.einsum("ekq,ekq->ek", resid, alpha)
    logdet = 2.0 * np.sum(
        np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1
    )
    ll = -0.5 * (quad + logdet + q * _LOG_2PI)
    return ll, alpha, prec


def segment_gauss_vjp(hmat, g_mean_seg, g_cov_seg):
    """Adjoint of the segment moment maps.

    Accumulates gradients w.r.t. the parameter-space mean and covariance
    from gradients w.r.t. every segment mean and covariance.

    hmat : (K, m, q); g_mean_seg : (E, K, q); g_cov_seg : (E, K, q, q).
    Returns (g_mu (E, m), g_cov (E, m, m)).
    """
    g_mu = np.einsum("kmq,ekq->em", hmat, g_mean_seg)
    g_cov = np.einsum("kmq,ekqr,knr->emn", hmat, g_cov_seg, hmat)
    return g_mu, g_cov
