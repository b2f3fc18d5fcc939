"""Episodic policy optimization over movement-primitive parameters.

Rollout collection samples one parameter vector per episode, turns it into
a trajectory conditioned on the environment's initial state, and lets the
environment's tracking controller execute it. Updates maximize an
importance-weighted advantage surrogate under per-state trust-region
projections of the predicted Gaussian. Two data preparations feed one
shared update engine:

* segment likelihoods — time-pair marginals of the induced trajectory
  distribution, one advantage per segment (the main learner),
* parameter likelihood — the sampled vector as a single datum with the
  episode return as its advantage (episodic baseline; diagonal or full
  covariance is decided by the policy's factor structure).

A step-based clipped-surrogate baseline on per-step actions rounds out the
comparison set. All gradient chains are hand-rolled: Gaussian log densities
-> moment maps -> projections -> network heads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import get_kernels
from .envs import EnvBatch, PdController, execute_trajectory
from .gaussian import (NoiseModel, ParamGaussian, gauss_kl, sample,
                       segment_basis, segment_mean_offset)
from .mp import MpKernel, Trajectory, compute_trajectory
from .nets import Mlp, adam_init, adam_step, backward, forward
from .policy import (EpisodicPolicy, StepPolicy, diag_gauss_log_prob,
                     episodic_backward, episodic_forward, predict,
                     step_backward, step_forward)
from .projection import (TrustRegionBounds, cov_dissimilarity,
                         cov_projection_vjp, mean_dissimilarity,
                         mean_projection_vjp, project_cov_batch,
                         project_mean_batch)


class NumericalError(RuntimeError):
    """A non-finite quantity appeared inside an update.

    Carries a diagnostics dict (epoch, objective, likelihood and ratio
    extrema) so callers can report what blew up before aborting.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


@dataclass(frozen=True)
class GaeConfig:
    gamma: float = 1.0
    lam: float = 0.95

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError("lam must be in [0, 1]")


@dataclass
class EpisodeRecord:
    """One episode: sampled parameters, executed rollout, rewards."""

    initial_state: np.ndarray   # (obs,)
    sampled_params: np.ndarray  # (m,)
    states: np.ndarray          # (T+1, obs) environment state at every tick
    rewards: np.ndarray         # (T,)
    desired: Trajectory         # trajectory generated from sampled_params
    executed: Trajectory        # what the tracking controller produced
    success: bool
    rng_seed: int

    def __post_init__(self):
        T = self.rewards.shape[0]
        if self.states.shape[0] != T + 1:
            raise ValueError("states must have one more row than rewards")
        if (self.desired.num_samples != T + 1
                or self.executed.num_samples != T + 1):
            raise ValueError("trajectories must span the episode")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


@dataclass
class SegmentBatch:
    """Contiguous time-pair segments of one episode.

    old_log_likelihoods and advantages start unset; the update fills them
    at entry, before its first epoch.
    """

    episode: EpisodeRecord
    pairs: np.ndarray          # (K, 2) grid indices, increasing
    returns: np.ndarray        # (K,) within-segment discounted returns
    observed: np.ndarray       # (K, 2*D) desired positions, DoF-major
    start_states: np.ndarray   # (K, obs)
    end_states: np.ndarray     # (K, obs)
    old_log_likelihoods: np.ndarray | None = None
    advantages: np.ndarray | None = None

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64)
        if (self.pairs.ndim != 2 or self.pairs.shape[0] < 1
                or self.pairs.shape[1] != 2):
            raise ValueError("pairs must have shape (K, 2) with K >= 1")
        if np.any(self.pairs[:, 1] <= self.pairs[:, 0]):
            raise ValueError("each pair must be increasing")
        if np.any(np.diff(self.pairs[:, 0]) <= 0):
            raise ValueError("pairs must be ordered")

    @property
    def num_segments(self) -> int:
        return self.pairs.shape[0]


def discounted_return(rewards, gamma: float) -> float:
    rewards = np.asarray(rewards, dtype=np.float64)
    return float(rewards @ gamma ** np.arange(rewards.shape[0]))


def collect_rollouts(env_factory, policy: EpisodicPolicy, kernel: MpKernel,
                     n_episodes: int, seeds,
                     controller: PdController | None = None,
                     ) -> list[EpisodeRecord]:
    """Sample one parameter vector per episode and execute the trajectory.

    seeds holds one integer per episode; every draw of an episode (task,
    parameters) comes from that episode's own generator, so records are
    reproducible bit for bit. Episode failures re-raise with the index.
    """
    if n_episodes < 0:
        raise ValueError("n_episodes must be >= 0")
    if n_episodes == 0:
        return []
    seeds = list(seeds)
    if len(seeds) < n_episodes:
        raise ValueError("need one seed per episode")
    if controller is None:
        controller = PdController()
    env = env_factory()
    records = []
    for i in range(n_episodes):
        try:
            rng = np.random.default_rng(seeds[i])
            s0 = env.reset(rng)
            pg = predict(policy, s0)
            params = sample(pg, rng)
            # state layout: positions first, then velocities
            traj = compute_trajectory(kernel, params, s0[:2], s0[2:4])
            rec = execute_trajectory(env, controller, traj)
        except Exception as e:
            raise RuntimeError(f"episode {i}: {e}") from e
        executed = Trajectory(
            pos=np.ascontiguousarray(rec.states[:, :2].T),
            vel=np.ascontiguousarray(rec.states[:, 2:4].T), dt=env.dt)
        records.append(EpisodeRecord(
            initial_state=s0, sampled_params=params, states=rec.states,
            rewards=rec.rewards, desired=traj, executed=executed,
            success=rec.success, rng_seed=int(seeds[i])))
    return records


def make_segments(ep: EpisodeRecord, num_segments: int,
                  gamma: float = 1.0) -> SegmentBatch:
    """Split an episode into contiguous time-pair segments.

    Boundaries are multiples of T // num_segments; the last pair absorbs
    any remainder. Segment returns discount from each segment's start.
    """
    T = ep.horizon
    K = int(num_segments)
    if not 1 <= K <= T:
        raise ValueError(f"num_segments must be in [1, {T}], got {num_segments}")
    starts = (T // K) * np.arange(K)
    pairs = np.stack([starts, np.append(starts[1:], T)], axis=1)
    disc = gamma ** np.arange(T - starts[-1])   # the last segment is longest
    returns = np.array([ep.rewards[s:e] @ disc[:e - s] for s, e in pairs])
    observed = np.stack([ep.desired.pos[:, p].reshape(-1) for p in pairs])
    return SegmentBatch(episode=ep, pairs=pairs, returns=returns,
                        observed=observed,
                        start_states=ep.states[pairs[:, 0]],
                        end_states=ep.states[pairs[:, 1]])


def value_of(value_fn: Mlp | None, states) -> np.ndarray:
    """Evaluate the value network on (n, obs) states; None means V == 0."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if value_fn is None:
        return np.zeros(states.shape[0])
    return forward(value_fn, states)[0][:, 0]


def gae_advantages(rewards, values, cfg: GaeConfig) -> np.ndarray:
    """Generalized advantages for one episode or a batch of equal length.

    values carries one trailing entry per episode (the terminal value;
    zero it for finite-horizon episodes).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    single = rewards.ndim == 1
    if single:
        rewards, values = rewards[None], values[None]
    if values.shape != (rewards.shape[0], rewards.shape[1] + 1):
        raise ValueError("values must hold one entry more than rewards")
    adv = get_kernels().gae_batch(np.ascontiguousarray(rewards),
                                  np.ascontiguousarray(values),
                                  float(cfg.gamma), float(cfg.lam))
    return adv[0] if single else adv


def segment_advantages(batch: SegmentBatch, value_fn: Mlp | None,
                       gamma: float = 1.0) -> np.ndarray:
    """A_k = R_k + gamma^len V(end) - V(start); the terminal tick has V = 0."""
    lengths = batch.pairs[:, 1] - batch.pairs[:, 0]
    v_start = value_of(value_fn, batch.start_states)
    v_end = value_of(value_fn, batch.end_states)
    v_end = np.where(batch.pairs[:, 1] == batch.episode.horizon, 0.0, v_end)
    return batch.returns + gamma ** lengths * v_end - v_start


def fit_value(value_fn: Mlp, states, targets, epochs: int, lr: float,
              adam=None):
    """Full-batch mean-squared regression of the value network.

    Returns (per-epoch losses, adam state); pass the state back in to keep
    optimizer momentum across iterations.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    n = states.shape[0]
    if targets.shape[0] != n:
        raise ValueError("one target per state required")
    params = value_fn.parameters()
    if adam is None:
        adam = adam_init(params)
    losses = []
    for _ in range(int(epochs)):
        out, tape = forward(value_fn, states)
        resid = out[:, 0] - targets
        losses.append(float(resid @ resid) / n)
        grads, _ = backward(value_fn, tape, (2.0 / n) * resid[:, None])
        adam_step(params, grads, adam, lr)
    return losses, adam


# --- shared projected-update engine ---------------------------------------


@dataclass
class UpdateData:
    """Everything one update needs, frozen at iteration start.

    The generic observation model is observed ~ N(base_mean + hmat^T mu,
    hmat^T Sigma hmat + noise_var I) per episode and segment; parameter-
    likelihood updates use the identity map with a single segment.
    """

    states: np.ndarray       # (E, obs) episode initial states
    hmat: np.ndarray         # (K, m, q) parameter-to-observation maps
    base_mean: np.ndarray    # (E, K, q)
    observed: np.ndarray     # (E, K, q)
    noise_var: float
    advantages: np.ndarray   # (E, K), standardized when requested
    mu_old: np.ndarray       # (E, m) iteration-start prediction
    chol_old: np.ndarray     # (E, m, m)
    cov_old: np.ndarray      # (E, m, m)
    ll_old: np.ndarray       # (E, K) likelihoods under the start policy


@dataclass(frozen=True)
class UpdateDiagnostics:
    """Post-update summary, evaluated against the iteration-start snapshot."""

    objective: float
    surrogate: float
    penalty: float
    mean_ratio: float
    mean_kl: float
    max_mean_dissim: float   # raw prediction drift, Mahalanobis^2
    max_cov_dissim: float    # raw covariance drift, Frobenius^2


@dataclass
class SurrogateEval:
    """One differentiation pass of the projected surrogate."""

    objective: float
    surrogate: float
    penalty: float
    grads: list
    ratios: np.ndarray
    ll_new: np.ndarray
    mean_raw: np.ndarray
    cov_raw: np.ndarray
    mean_proj: np.ndarray
    cov_proj: np.ndarray


def _standardize(adv: np.ndarray, enabled: bool,
                 per_column: bool = False) -> np.ndarray:
    """Zero-mean unit-variance advantages; optionally per segment index.

    Segments at different positions in the episode carry returns of very
    different magnitude (travel phase vs settled phase), and a global
    scale lets the large early advantages drown the late ones that govern
    endpoint precision. Column-wise standardization gives every segment
    index an equal-variance vote across the episode batch.
    """
    if not enabled or adv.size < 2:
        return adv
    if per_column and adv.shape[0] > 1:
        return (adv - adv.mean(axis=0)) / (adv.std(axis=0) + 1e-8)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def _snapshot(policy: EpisodicPolicy, states: np.ndarray):
    fwd = episodic_forward(policy, states)
    mu = fwd.mean.copy()
    chol = fwd.chol.copy()
    return mu, chol, chol @ np.swapaxes(chol, -1, -2)


def prepare_tce_data(policy: EpisodicPolicy, value_fn: Mlp | None,
                     batches: list[SegmentBatch], kernel: MpKernel,
                     gamma: float = 1.0, noise: NoiseModel | None = None,
                     normalize: bool = True,
                     advantages: np.ndarray | None = None) -> UpdateData:
    """Stack segment batches and cache start-policy likelihoods/advantages.

    Also fills each batch's advantages and old_log_likelihoods fields.
    `advantages` (episodes, segments) overrides the direct value-bootstrap
    form, e.g. with per-step advantage sums over each segment.
    """
    if not batches:
        raise ValueError("need at least one segment batch")
    noise = noise or NoiseModel()
    pairs = batches[0].pairs
    for b in batches[1:]:
        if not np.array_equal(b.pairs, pairs):
            raise ValueError("all batches must share one segmentation")
    states = np.stack([b.episode.initial_state for b in batches])
    observed = np.stack([b.observed for b in batches])
    hmat = segment_basis(kernel, pairs)
    base_mean = np.stack([
        segment_mean_offset(kernel, pairs, b.episode.desired.pos[:, 0],
                            b.episode.desired.vel[:, 0])
        for b in batches])
    if advantages is None:
        adv = np.stack([segment_advantages(b, value_fn, gamma)
                        for b in batches])
    else:
        adv = np.asarray(advantages, dtype=np.float64)
        if adv.shape != (len(batches), len(pairs)):
            raise ValueError("advantage override has wrong shape")
    mu_old, chol_old, cov_old = _snapshot(policy, states)
    ll_old = get_kernels().segment_gauss_forward(
        hmat, mu_old, cov_old, base_mean, observed, noise.variance)[0]
    for i, b in enumerate(batches):
        b.advantages = adv[i]
        b.old_log_likelihoods = ll_old[i]
    return UpdateData(states=states, hmat=hmat, base_mean=base_mean,
                      observed=observed, noise_var=noise.variance,
                      advantages=_standardize(adv, normalize, per_column=True),
                      mu_old=mu_old, chol_old=chol_old, cov_old=cov_old,
                      ll_old=ll_old)


def prepare_bbrl_data(policy: EpisodicPolicy, value_fn: Mlp | None,
                      episodes: list[EpisodeRecord], gamma: float = 1.0,
                      normalize: bool = True) -> UpdateData:
    """Each episode's sampled parameter vector is the single datum.

    Advantage = discounted episode return minus V(s0), or minus the batch
    mean return when no critic is given.
    """
    if not episodes:
        raise ValueError("need at least one episode")
    m = episodes[0].sampled_params.shape[0]
    states = np.stack([ep.initial_state for ep in episodes])
    observed = np.stack([ep.sampled_params for ep in episodes])[:, None, :]
    hmat = np.eye(m)[None, :, :]
    base_mean = np.zeros((len(episodes), 1, m))
    returns = np.array([discounted_return(ep.rewards, gamma)
                        for ep in episodes])
    baseline = (value_of(value_fn, states) if value_fn is not None
                else np.full(len(episodes), returns.mean()))
    adv = (returns - baseline)[:, None]
    mu_old, chol_old, cov_old = _snapshot(policy, states)
    ll_old = get_kernels().segment_gauss_forward(
        hmat, mu_old, cov_old, base_mean, observed, 0.0)[0]
    return UpdateData(states=states, hmat=hmat, base_mean=base_mean,
                      observed=observed, noise_var=0.0,
                      advantages=_standardize(adv, normalize),
                      mu_old=mu_old, chol_old=chol_old, cov_old=cov_old,
                      ll_old=ll_old)


def surrogate_objective_grads(policy: EpisodicPolicy, data: UpdateData,
                              bounds: TrustRegionBounds) -> SurrogateEval:
    """Importance-weighted advantage surrogate and its ascent gradient.

    One full differentiation pass: Gaussian log densities -> moment maps ->
    trust-region projections -> network heads. The penalty regresses raw
    predictions toward their projections with the targets held fixed, so
    its gradient does not flow through the projection.
    """
    kern = get_kernels()
    E, K = data.advantages.shape
    fwd = episodic_forward(policy, data.states)
    cov_raw = fwd.chol @ np.swapaxes(fwd.chol, -1, -2)
    mproj = project_mean_batch(fwd.mean, data.mu_old, data.chol_old,
                               bounds.eps_mean)
    cproj = project_cov_batch(cov_raw, data.cov_old, bounds.eps_cov)
    ll_new, alpha, prec = kern.segment_gauss_forward(
        data.hmat, mproj.projected, cproj.projected, data.base_mean,
        data.observed, data.noise_var)
    ratios = np.exp(ll_new - data.ll_old)
    surrogate = float(np.sum(ratios * data.advantages)) / (E * K)
    dmu = fwd.mean - mproj.projected
    dcov = cov_raw - cproj.projected
    penalty = bounds.reg_weight * (np.sum(dmu * dmu)
                                   + np.sum(dcov * dcov)) / E

    w = ratios * data.advantages / (E * K)            # dJ / d ll_new
    g_mean_seg = w[..., None] * alpha
    outer = alpha[..., :, None] * alpha[..., None, :]
    g_cov_seg = (0.5 * w[..., None, None]) * (outer - prec)
    g_mu, g_cov = kern.segment_gauss_vjp(
        data.hmat, g_mean_seg, np.ascontiguousarray(g_cov_seg))
    g_mu = mean_projection_vjp(mproj, g_mu)
    g_cov = cov_projection_vjp(cproj, g_cov)
    if bounds.reg_weight > 0.0:
        g_mu -= (2.0 * bounds.reg_weight / E) * dmu
        g_cov -= (2.0 * bounds.reg_weight / E) * dcov
    g_chol = (g_cov + np.swapaxes(g_cov, -1, -2)) @ fwd.chol
    grads = episodic_backward(policy, fwd, g_mu, g_chol)
    return SurrogateEval(objective=surrogate - float(penalty),
                         surrogate=surrogate, penalty=float(penalty),
                         grads=grads, ratios=ratios, ll_new=ll_new,
                         mean_raw=fwd.mean, cov_raw=cov_raw,
                         mean_proj=mproj.projected, cov_proj=cproj.projected)


def _abort_diagnostics(epoch: int, ev: SurrogateEval) -> dict:
    grad_rms = max(float(np.sqrt(np.mean(g * g))) for g in ev.grads)
    return {"epoch": epoch, "objective": ev.objective,
            "ll_new_min": float(np.min(ev.ll_new)),
            "ll_new_max": float(np.max(ev.ll_new)),
            "ratio_max": float(np.max(ev.ratios)),
            "grad_rms_max": grad_rms}


def _final_diagnostics(policy: EpisodicPolicy, data: UpdateData,
                       bounds: TrustRegionBounds) -> UpdateDiagnostics:
    E, K = data.advantages.shape
    fwd = episodic_forward(policy, data.states)
    cov_raw = fwd.chol @ np.swapaxes(fwd.chol, -1, -2)
    mproj = project_mean_batch(fwd.mean, data.mu_old, data.chol_old,
                               bounds.eps_mean)
    cproj = project_cov_batch(cov_raw, data.cov_old, bounds.eps_cov)
    ll_new = get_kernels().segment_gauss_forward(
        data.hmat, mproj.projected, cproj.projected, data.base_mean,
        data.observed, data.noise_var)[0]
    ratios = np.exp(ll_new - data.ll_old)
    surrogate = float(np.sum(ratios * data.advantages)) / (E * K)
    dmu = fwd.mean - mproj.projected
    dcov = cov_raw - cproj.projected
    penalty = float(bounds.reg_weight * (np.sum(dmu * dmu)
                                         + np.sum(dcov * dcov)) / E)
    proj_chol = np.linalg.cholesky(cproj.projected)
    kls = [gauss_kl(ParamGaussian(mean=mproj.projected[e],
                                  chol=proj_chol[e]),
                    ParamGaussian(mean=data.mu_old[e],
                                  chol=data.chol_old[e]))
           for e in range(E)]
    mean_dissims = [mean_dissimilarity(fwd.mean[e], data.mu_old[e],
                                       data.chol_old[e]) for e in range(E)]
    cov_dissims = [cov_dissimilarity(cov_raw[e], data.cov_old[e])
                   for e in range(E)]
    return UpdateDiagnostics(objective=surrogate - penalty,
                             surrogate=surrogate, penalty=penalty,
                             mean_ratio=float(ratios.mean()),
                             mean_kl=float(np.mean(kls)),
                             max_mean_dissim=float(max(mean_dissims)),
                             max_cov_dissim=float(max(cov_dissims)))


def _regression_grads(policy: EpisodicPolicy, data: UpdateData,
                      bounds: TrustRegionBounds):
    """Gradients of the raw prediction's drift past the trust region.

    Returns None once no projection is active, i.e. the raw outputs
    already sit inside the bounds around the iteration-start snapshot.
    """
    fwd = episodic_forward(policy, data.states)
    cov = fwd.chol @ np.swapaxes(fwd.chol, -1, -2)
    mp = project_mean_batch(fwd.mean, data.mu_old, data.chol_old,
                            bounds.eps_mean)
    cp = project_cov_batch(cov, data.cov_old, bounds.eps_cov)
    if not (mp.active.any() or cp.active.any()):
        return None
    n_ep = fwd.mean.shape[0]
    g_mean = 2.0 * (fwd.mean - mp.projected) / n_ep
    g_cov = 2.0 * (cov - cp.projected) / n_ep
    g_chol = (g_cov + np.swapaxes(g_cov, -1, -2)) @ fwd.chol
    return episodic_backward(policy, fwd, g_mean, g_chol)


def projected_update(policy: EpisodicPolicy, data: UpdateData,
                     bounds: TrustRegionBounds, epochs: int, lr: float,
                     adam=None, max_regression_steps: int = 500):
    """Run ascent epochs of the projected surrogate.

    Every epoch projects the current prediction against the iteration-start
    snapshot held in `data`; the penalty keeps the raw network outputs near
    the projected ones during the epochs. Afterwards a regression phase pulls
    any remaining raw drift back inside the bounds, so the distribution that
    acts in the next iteration respects them too. Returns
    (diagnostics, adam state).
    """
    params = policy.parameters()
    if adam is None:
        adam = adam_init(params)
    for epoch in range(int(epochs)):
        try:
            ev = surrogate_objective_grads(policy, data, bounds)
        except np.linalg.LinAlgError as e:
            raise NumericalError(
                f"epoch {epoch}: covariance factorization failed",
                {"epoch": epoch}) from e
        if (not math.isfinite(ev.objective)
                or any(not np.all(np.isfinite(g)) for g in ev.grads)):
            raise NumericalError(
                f"epoch {epoch}: non-finite objective or gradient",
                _abort_diagnostics(epoch, ev))
        adam_step(params, [-g for g in ev.grads], adam, lr)
    reg_adam = None
    for step in range(int(max_regression_steps)):
        grads = _regression_grads(policy, data, bounds)
        if grads is None:
            break
        if any(not np.all(np.isfinite(g)) for g in grads):
            raise NumericalError(
                f"regression step {step}: non-finite gradient",
                {"regression_step": step})
        if reg_adam is None:
            reg_adam = adam_init(params)
        adam_step(params, grads, reg_adam, lr)
    return _final_diagnostics(policy, data, bounds), adam


def tce_update(policy: EpisodicPolicy, value_fn: Mlp | None,
               batches: list[SegmentBatch], kernel: MpKernel,
               bounds: TrustRegionBounds, epochs: int, lr: float, *,
               gamma: float = 1.0, noise: NoiseModel | None = None,
               normalize: bool = True, advantages: np.ndarray | None = None,
               adam=None):
    """Segment-likelihood policy update (the main learner)."""
    data = prepare_tce_data(policy, value_fn, batches, kernel, gamma=gamma,
                            noise=noise, normalize=normalize,
                            advantages=advantages)
    return projected_update(policy, data, bounds, epochs, lr, adam=adam)


def bbrl_update(policy: EpisodicPolicy, value_fn: Mlp | None,
                episodes: list[EpisodeRecord], bounds: TrustRegionBounds,
                epochs: int, lr: float, *, gamma: float = 1.0,
                normalize: bool = True, adam=None):
    """Parameter-likelihood episodic update (one datum per episode)."""
    data = prepare_bbrl_data(policy, value_fn, episodes, gamma=gamma,
                             normalize=normalize)
    return projected_update(policy, data, bounds, epochs, lr, adam=adam)


# --- step-based baseline ---------------------------------------------------


@dataclass
class StepRollouts:
    """Vectorized step-policy rollouts over one fixed horizon."""

    states: np.ndarray      # (B, T+1, obs)
    actions: np.ndarray     # (B, T, A)
    rewards: np.ndarray     # (B, T)
    log_probs: np.ndarray   # (B, T) under the collecting policy
    successes: np.ndarray   # (B,) bool


@dataclass(frozen=True)
class StepUpdateDiagnostics:
    objective: float
    mean_ratio: float
    mean_kl: float
    clip_fraction: float
    value_loss: float


def collect_step_rollouts(env_batch: EnvBatch, policy: StepPolicy,
                          rng: np.random.Generator) -> StepRollouts:
    """Roll the step policy through a lockstep environment batch."""
    s = env_batch.reset(rng)
    B, obs = s.shape
    T = env_batch.horizon
    A = policy.action_dim
    states = np.empty((B, T + 1, obs))
    actions = np.empty((B, T, A))
    rewards = np.empty((B, T))
    log_probs = np.empty((B, T))
    states[:, 0] = s
    sigma = np.exp(policy.log_std)
    for t in range(T):
        mean = step_forward(policy, s).mean
        a = mean + sigma * rng.standard_normal((B, A))
        log_probs[:, t] = diag_gauss_log_prob(mean, policy.log_std, a)
        s, r, _ = env_batch.step(a)
        states[:, t + 1] = s
        actions[:, t] = a
        rewards[:, t] = r
    return StepRollouts(states=states, actions=actions, rewards=rewards,
                        log_probs=log_probs,
                        successes=env_batch.success.copy())


def clipped_surrogate_grads(policy: StepPolicy, states, actions, logp_old,
                            adv, clip_eps: float):
    """Clipped importance surrogate and its ascent gradients for one batch.

    Clipped samples contribute no gradient; inside the clip band the
    gradient is the plain importance-weighted one. Returns (objective,
    grads aligned with parameters() incl. log_std, ratios).
    """
    fwd = step_forward(policy, states)
    sigma = np.exp(policy.log_std)
    z = (actions - fwd.mean) / sigma
    logp = diag_gauss_log_prob(fwd.mean, policy.log_std, actions)
    ratio = np.exp(logp - logp_old)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    objective = float(np.minimum(surr1, surr2).mean())
    dlp = np.where(surr1 <= surr2, surr1, 0.0) / states.shape[0]
    g_mean = dlp[:, None] * z / sigma
    g_log_std = (dlp[:, None] * (z * z - 1.0)).sum(axis=0)
    grads = step_backward(policy, fwd, g_mean) + [g_log_std]
    return objective, grads, ratio


def ppo_step_update(policy: StepPolicy, value_fn: Mlp,
                    rollouts: StepRollouts, clip_eps: float, epochs: int,
                    lr: float, *, gae: GaeConfig | None = None,
                    minibatches: int = 4, rng=None, adam=None,
                    value_adam=None, value_lr: float | None = None):
    """Clipped-surrogate update of the step policy with a jointly fitted
    critic.

    Advantages come from GAE with a zero terminal bootstrap, computed once
    at entry; the critic regresses on value-plus-advantage targets over the
    same shuffled minibatches. Returns (diagnostics, adam, value_adam).
    """
    if not clip_eps > 0:
        raise ValueError("clip_eps must be positive")
    gae = gae or GaeConfig(gamma=0.99, lam=0.95)
    rng = np.random.default_rng(rng)
    value_lr = lr if value_lr is None else value_lr
    B, T = rollouts.rewards.shape
    obs = rollouts.states.shape[2]
    values = value_of(value_fn,
                      rollouts.states.reshape(-1, obs)).reshape(B, T + 1)
    values[:, -1] = 0.0
    adv = gae_advantages(rollouts.rewards, values, gae)
    targets = (values[:, :T] + adv).reshape(-1)
    states = rollouts.states[:, :T].reshape(B * T, obs)
    actions = rollouts.actions.reshape(B * T, -1)
    logp_old = rollouts.log_probs.reshape(-1)
    adv = _standardize(adv.reshape(-1), True)
    minibatches = max(1, min(int(minibatches), B * T))

    pol_params = policy.parameters()
    val_params = value_fn.parameters()
    if adam is None:
        adam = adam_init(pol_params)
    if value_adam is None:
        value_adam = adam_init(val_params)
    value_loss = math.nan
    for epoch in range(int(epochs)):
        order = rng.permutation(B * T)
        for chunk in np.array_split(order, minibatches):
            n = chunk.shape[0]
            objective, grads, ratio = clipped_surrogate_grads(
                policy, states[chunk], actions[chunk], logp_old[chunk],
                adv[chunk], clip_eps)
            if not math.isfinite(objective):
                raise NumericalError(
                    f"epoch {epoch}: non-finite clipped surrogate",
                    {"epoch": epoch, "objective": objective,
                     "ratio_max": float(np.max(ratio))})
            adam_step(pol_params, [-g for g in grads], adam, lr)
            out, tape = forward(value_fn, states[chunk])
            resid = out[:, 0] - targets[chunk]
            value_loss = float(resid @ resid) / n
            vgrads, _ = backward(value_fn, tape, (2.0 / n) * resid[:, None])
            adam_step(val_params, vgrads, value_adam, value_lr)

    mean = step_forward(policy, states).mean
    logp = diag_gauss_log_prob(mean, policy.log_std, actions)
    ratio = np.exp(logp - logp_old)
    surr = np.minimum(ratio * adv,
                      np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)
    diag = StepUpdateDiagnostics(
        objective=float(surr.mean()), mean_ratio=float(ratio.mean()),
        mean_kl=float(np.mean(logp_old - logp)),
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
        value_loss=value_loss)
    return diag, adam, value_adam
