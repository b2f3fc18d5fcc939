"""Numba kernel implementations.

JIT twin of _kernels_numpy; see that module for the contracts. The loops
mirror the numpy arithmetic order so tracking_rollout and gae_batch are
bit-exact across backends. No fastmath anywhere: IEEE semantics are part
of the contract.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BACKEND_NAME = "numba"

_LOG_2PI = float(np.log(2.0 * np.pi))


@njit(cache=True)
def tracking_rollout(pos0, vel0, target_pos, target_vel, kp, kd, a_max, dt):
    T, D = target_pos.shape
    pos = np.empty((T + 1, D))
    vel = np.empty((T + 1, D))
    acc = np.empty((T, D))
    for d in range(D):
        pos[0, d] = pos0[d]
        vel[0, d] = vel0[d]
    for t in range(T):
        for d in range(D):
            p = pos[t, d]
            v = vel[t, d]
            a = kp * (target_pos[t, d] - p) + kd * (target_vel[t, d] - v)
            # clip, NaN-propagating like np.clip
            if a > a_max:
                a = a_max
            elif a < -a_max:
                a = -a_max
            acc[t, d] = a
            pos[t + 1, d] = p + v * dt + 0.5 * a * dt * dt
            vel[t + 1, d] = v + a * dt
    return pos, vel, acc


@njit(cache=True)
def gae_batch(rewards, values, gamma, lam):
    E, T = rewards.shape
    adv = np.empty((E, T))
    for e in range(E):
        carry = 0.0
        for t in range(T - 1, -1, -1):
            delta = rewards[e, t] + gamma * values[e, t + 1] - values[e, t]
            carry = delta + gamma * lam * carry
            adv[e, t] = carry
    return adv


@njit(cache=True)
def _cholesky_lower(S, L):
    # in-place lower Cholesky of the q x q matrix S into L
    q = S.shape[0]
    for i in range(q):
        s = S[i, i]
        for j in range(i):
            s -= L[i, j] * L[i, j]
        L[i, i] = np.sqrt(s)
        for r in range(i + 1, q):
            t = S[r, i]
            for j in range(i):
                t -= L[r, j] * L[i, j]
            L[r, i] = t / L[i, i]
        for r in range(i):
            L[r, i] = 0.0


@njit(cache=True)
def segment_gauss_forward(hmat, mu, cov, base_mean, observed, noise_var):
    E, m = mu.shape
    K = hmat.shape[0]
    q = hmat.shape[2]
    ll = np.empty((E, K))
    alpha = np.empty((E, K, q))
    prec = np.empty((E, K, q, q))
    tmp = np.empty((m, q))
    S = np.empty((q, q))
    L = np.empty((q, q))
    z = np.empty(q)
    w = np.empty(q)
    for e in range(E):
        for k in range(K):
            # S = H^T cov H + noise_var I, mean = base + H^T mu
            for i in range(m):
                for j in range(q):
                    acc = 0.0
                    for n in range(m):
                        acc += cov[e, i, n] * hmat[k, n, j]
                    tmp[i, j] = acc
            for i in range(q):
                for j in range(q):
                    acc = 0.0
                    for n in range(m):
                        acc += hmat[k, n, i] * tmp[n, j]
                    S[i, j] = acc
                S[i, i] += noise_var
            _cholesky_lower(S, L)
            logdet = 0.0
            for i in range(q):
                logdet += np.log(L[i, i])
            logdet *= 2.0
            # residual and alpha = S^{-1} resid via two triangular solves
            for i in range(q):
                mean_i = base_mean[e, k, i]
                for n in range(m):
                    mean_i += hmat[k, n, i] * mu[e, n]
                z[i] = observed[e, k, i] - mean_i
            quad = 0.0
            for i in range(q):
                s = z[i]
                for j in range(i):
                    s -= L[i, j] * w[j]
                w[i] = s / L[i, i]
                quad += w[i] * w[i]
            for i in range(q - 1, -1, -1):
                s = w[i]
                for j in range(i + 1, q):
                    s -= L[j, i] * alpha[e, k, j]
                alpha[e, k, i] = s / L[i, i]
            ll[e, k] = -0.5 * (quad + logdet + q * _LOG_2PI)
            # precision via q unit-vector solves
            for col in range(q):
                for i in range(q):
                    s = 1.0 if i == col else 0.0
                    for j in range(i):
                        s -= L[i, j] * w[j]
                    w[i] = s / L[i, i]
                for i in range(q - 1, -1, -1):
                    s = w[i]
                    for j in range(i + 1, q):
                        s -= L[j, i] * prec[e, k, j, col]
                    prec[e, k, i, col] = s / L[i, i]
    return ll, alpha, prec


@njit(cache=True)
def segment_gauss_vjp(hmat, g_mean_seg, g_cov_seg):
    E = g_mean_seg.shape[0]
    K, m, q = hmat.shape
    g_mu = np.zeros((E, m))
    g_cov = np.zeros((E, m, m))
    tmp = np.empty((m, q))
    for e in range(E):
        for k in range(K):
            for i in range(m):
                acc = 0.0
                for j in range(q):
                    acc += hmat[k, i, j] * g_mean_seg[e, k, j]
                g_mu[e, i] += acc
            # g_cov += H G H^T
            for i in range(m):
                for j in range(q):
                    acc = 0.0
                    for r in range(q):
                        acc += hmat[k, i, r] * g_cov_seg[e, k, r, j]
                    tmp[i, j] = acc
            for i in range(m):
                for n in range(m):
                    acc = 0.0
                    for j in range(q):
                        acc += tmp[i, j] * hmat[k, n, j]
                    g_cov[e, i, n] += acc
    return g_mu, g_cov
