"""Iteration loop: collect rollouts, refit the critic, update the policy.

One root seed drives every stochastic component through numeric
SeedSequence tags, so a (config, seed) pair reproduces a run bit for bit
regardless of what else has consumed randomness in the process.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .envs import EnvBatch, PdController, execute_trajectory, make_env
from .gaussian import NoiseModel
from .learner import (GaeConfig, bbrl_update, collect_rollouts,
                      collect_step_rollouts, discounted_return, fit_value,
                      gae_advantages, make_segments, ppo_step_update,
                      tce_update, value_of)
from .mp import MpConfig, Trajectory, build_kernel, compute_trajectory
from .nets import init_mlp
from .policy import init_episodic_policy, init_step_policy, predict
from .projection import TrustRegionBounds

PROGRESS_FIELDS = ("iteration", "env_steps", "mean_return", "success_rate",
                   "mean_ratio", "mean_kl", "objective", "value_loss")

# SeedSequence component tags (never reuse a number for a new purpose)
_TAG_POLICY = 1
_TAG_VALUE = 2
_TAG_ROLLOUT = 3
_TAG_EXPLORE = 4
_TAG_MINIBATCH = 5
_TAG_EVAL = 6


def component_rng(root_seed: int, *tags: int) -> np.random.Generator:
    """Independent generator for one component of one run."""
    return np.random.default_rng(np.random.SeedSequence((root_seed, *tags)))


def episode_seeds(root_seed: int, iteration: int, n: int) -> list:
    ss = np.random.SeedSequence((root_seed, _TAG_ROLLOUT, iteration))
    return [int(s) for s in ss.generate_state(n, dtype=np.uint64)]


def env_kwargs(cfg: RunConfig) -> dict:
    return dict(horizon=cfg.horizon, dt=cfg.dt, a_max=cfg.a_max,
                random_init=cfg.random_init)


def mp_config(cfg: RunConfig) -> MpConfig:
    return MpConfig(num_dof=2, num_basis=cfg.num_basis,
                    duration=cfg.horizon * cfg.dt, num_steps=cfg.horizon)


@dataclass
class TrainResult:
    """Final state of one seeded run plus its per-iteration progress rows."""

    policy: object
    value_fn: object
    rows: list
    env_steps: int


def _progress_row(iteration, env_steps, mean_return, success_rate,
                  mean_ratio, mean_kl, objective, value_loss) -> dict:
    return {
        "iteration": int(iteration),
        "env_steps": int(env_steps),
        "mean_return": float(mean_return),
        "success_rate": float(success_rate),
        "mean_ratio": float(mean_ratio),
        "mean_kl": float(mean_kl),
        "objective": float(objective),
        "value_loss": float(value_loss),
    }


def _segment_gae_advantages(episodes, value_fn, pairs, gae_cfg):
    """Per-step GAE advantages accumulated over each segment."""
    rewards = np.stack([ep.rewards for ep in episodes])
    values = np.stack([value_of(value_fn, ep.states) for ep in episodes])
    values[:, -1] = 0.0
    steps = gae_advantages(rewards, values, gae_cfg)
    decay = gae_cfg.gamma * gae_cfg.lam
    out = np.empty((len(episodes), len(pairs)))
    for k, (s, t) in enumerate(pairs):
        out[:, k] = steps[:, s:t] @ (decay ** np.arange(t - s))
    return out


def _run_episodic(cfg: RunConfig, seed: int, on_iteration) -> TrainResult:
    env_factory = lambda: make_env(cfg.env, **env_kwargs(cfg))
    obs_dim = env_factory().observation_dim
    kernel = build_kernel(mp_config(cfg))
    diagonal = cfg.algorithm == "bbrl"
    policy = init_episodic_policy(
        obs_dim, kernel.config.num_params, cfg.policy_hidden, cfg.activation,
        component_rng(seed, _TAG_POLICY), weight_scale=cfg.weight_scale,
        initial_std=cfg.initial_std, diagonal_only=diagonal)
    value_fn = init_mlp((obs_dim, *cfg.value_hidden, 1), cfg.activation,
                        component_rng(seed, _TAG_VALUE))
    bounds = TrustRegionBounds(eps_mean=cfg.eps_mean, eps_cov=cfg.eps_cov,
                               reg_weight=cfg.reg_weight)
    noise = NoiseModel(cfg.noise_std)
    gae_cfg = GaeConfig(cfg.gamma, cfg.lam)
    controller = PdController()
    adam = value_adam = None
    rows = []
    env_steps = 0
    for it in range(cfg.iterations):
        seeds = episode_seeds(seed, it, cfg.episodes_per_iteration)
        episodes = collect_rollouts(env_factory, policy, kernel,
                                    cfg.episodes_per_iteration, seeds,
                                    controller=controller)
        env_steps += sum(ep.horizon for ep in episodes)
        if cfg.algorithm == "tce":
            rewards = np.stack([ep.rewards for ep in episodes])
            values = np.stack([value_of(value_fn, ep.states)
                               for ep in episodes])
            values[:, -1] = 0.0
            adv = gae_advantages(rewards, values, gae_cfg)
            targets = (values[:, :-1] + adv).reshape(-1)
            states = np.concatenate([ep.states[:-1] for ep in episodes])
            losses, value_adam = fit_value(value_fn, states, targets,
                                           cfg.value_epochs, cfg.value_lr,
                                           adam=value_adam)
            batches = [make_segments(ep, cfg.k_segments, cfg.gamma)
                       for ep in episodes]
            override = None
            if cfg.advantage_mode == "gae":
                override = _segment_gae_advantages(
                    episodes, value_fn, batches[0].pairs, gae_cfg)
            diag, adam = tce_update(
                policy, value_fn, batches, kernel, bounds,
                cfg.update_epochs, cfg.policy_lr, gamma=cfg.gamma,
                noise=noise, normalize=cfg.normalize_advantages,
                advantages=override, adam=adam)
        else:
            starts = np.stack([ep.initial_state for ep in episodes])
            returns = np.array([discounted_return(ep.rewards, cfg.gamma)
                                for ep in episodes])
            losses, value_adam = fit_value(value_fn, starts, returns,
                                           cfg.value_epochs, cfg.value_lr,
                                           adam=value_adam)
            diag, adam = bbrl_update(
                policy, value_fn, episodes, bounds, cfg.update_epochs,
                cfg.policy_lr, gamma=cfg.gamma,
                normalize=cfg.normalize_advantages, adam=adam)
        row = _progress_row(
            it, env_steps,
            np.mean([ep.episode_return for ep in episodes]),
            np.mean([ep.success for ep in episodes]),
            diag.mean_ratio, diag.mean_kl, diag.objective, losses[-1])
        rows.append(row)
        if on_iteration is not None:
            on_iteration(row)
    return TrainResult(policy=policy, value_fn=value_fn, rows=rows,
                       env_steps=env_steps)


def _run_step(cfg: RunConfig, seed: int, on_iteration) -> TrainResult:
    batch = EnvBatch(cfg.env, cfg.episodes_per_iteration, **env_kwargs(cfg))
    obs_dim = batch.observation_dim
    policy = init_step_policy(obs_dim, batch.action_dim, cfg.policy_hidden,
                              cfg.activation, component_rng(seed, _TAG_POLICY),
                              init_log_std=cfg.init_log_std)
    value_fn = init_mlp((obs_dim, *cfg.value_hidden, 1), cfg.activation,
                        component_rng(seed, _TAG_VALUE))
    explore_rng = component_rng(seed, _TAG_EXPLORE)
    shuffle_rng = component_rng(seed, _TAG_MINIBATCH)
    gae_cfg = GaeConfig(cfg.ppo_gamma, cfg.ppo_lam)
    adam = value_adam = None
    rows = []
    env_steps = 0
    for it in range(cfg.iterations):
        ro = collect_step_rollouts(batch, policy, explore_rng)
        env_steps += ro.rewards.size
        diag, adam, value_adam = ppo_step_update(
            policy, value_fn, ro, cfg.clip_eps, cfg.ppo_epochs, cfg.ppo_lr,
            gae=gae_cfg, minibatches=cfg.minibatches, rng=shuffle_rng,
            adam=adam, value_adam=value_adam, value_lr=cfg.value_lr)
        row = _progress_row(
            it, env_steps, ro.rewards.sum(axis=1).mean(),
            ro.successes.mean(), diag.mean_ratio, diag.mean_kl,
            diag.objective, diag.value_loss)
        rows.append(row)
        if on_iteration is not None:
            on_iteration(row)
    return TrainResult(policy=policy, value_fn=value_fn, rows=rows,
                       env_steps=env_steps)


def run_training(cfg: RunConfig, seed: int, on_iteration=None) -> TrainResult:
    """Train one seed to completion; NumericalError propagates to the caller
    after any rows already produced were reported through on_iteration."""
    if cfg.algorithm in ("tce", "bbrl", "bbrl-cov"):
        return _run_episodic(cfg, seed, on_iteration)
    if cfg.algorithm == "ppo-step":
        return _run_step(cfg, seed, on_iteration)
    raise ValueError(f"unknown algorithm {cfg.algorithm!r}")


@dataclass
class EvalEpisode:
    """Deterministic evaluation episode driven by the mean prediction."""

    episode_return: float
    success: bool
    desired: Trajectory | None
    executed: Trajectory


def _executed_trajectory(states: np.ndarray, dt: float) -> Trajectory:
    return Trajectory(pos=np.ascontiguousarray(states[:, :2].T),
                      vel=np.ascontiguousarray(states[:, 2:4].T), dt=dt)


def evaluate_policy(cfg: RunConfig, policy, kernel, seed: int,
                    n_episodes: int) -> list:
    """Run mean-prediction episodes (tasks still vary with the seed)."""
    controller = PdController()
    out = []
    for e in range(n_episodes):
        rng = component_rng(seed, _TAG_EVAL, e)
        env = make_env(cfg.env, **env_kwargs(cfg))
        s0 = env.reset(rng)
        pg = predict(policy, s0)
        traj = compute_trajectory(kernel, pg.mean, s0[:2], s0[2:4])
        rec = execute_trajectory(env, controller, traj)
        out.append(EvalEpisode(
            episode_return=float(rec.rewards.sum()), success=bool(rec.success),
            desired=traj, executed=_executed_trajectory(rec.states, env.dt)))
    return out


def evaluate_step_policy(cfg: RunConfig, policy, seed: int,
                         n_episodes: int) -> list:
    """Mean-action episodes for the per-step baseline."""
    from .policy import step_forward

    out = []
    for e in range(n_episodes):
        rng = component_rng(seed, _TAG_EVAL, e)
        env = make_env(cfg.env, **env_kwargs(cfg))
        s = env.reset(rng)
        states = [s]
        rewards = []
        done = False
        while not done:
            a = step_forward(policy, s[None, :]).mean[0]
            s, r, done = env.step(a)
            states.append(s)
            rewards.append(r)
        states = np.asarray(states)
        out.append(EvalEpisode(
            episode_return=float(np.sum(rewards)), success=bool(env.success),
            desired=None, executed=_executed_trajectory(states, env.dt)))
    return out
