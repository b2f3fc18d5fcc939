"""Toy double-integrator control environments and PD trajectory execution.

Two planar point-mass tasks: a dense-reward reacher and a sparse,
non-Markovian via-point task that pays out only twice per episode. The
dynamics use the exact discrete double-integrator update (no integrator
error), actions are clipped accelerations, and task parameters (goal,
via point, optionally the start position) are drawn from a caller-owned
generator so episodes are reproducible.

execute_trajectory() runs the PD tracking loop through the active compute
backend and is bit-identical to calling track() + step() one step at a
time: both paths share the same update expressions, evaluated in the same
order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import get_kernels
from .mp import Trajectory


@dataclass(frozen=True)
class PdController:
    """Tracking gains for the double integrator; the defaults are
    critically damped (kd^2 = 4 kp), and anything underdamped is refused."""

    kp: float = 100.0
    kd: float = 20.0

    def __post_init__(self):
        if not (self.kp > 0 and self.kd > 0):
            raise ValueError("controller gains must be positive")
        if self.kd * self.kd < 4.0 * self.kp:
            raise ValueError(
                f"underdamped tracking: need kd^2 >= 4*kp, got "
                f"kd^2={self.kd * self.kd:g} < {4.0 * self.kp:g}")


def track(controller: PdController, desired_pos, desired_vel, pos, vel,
          a_max: float = np.inf) -> np.ndarray:
    """PD acceleration command toward a desired state, clipped to the
    consuming environment's bounds (unbounded by default)."""
    a = (controller.kp * (np.asarray(desired_pos, dtype=np.float64) - pos)
         + controller.kd * (np.asarray(desired_vel, dtype=np.float64) - vel))
    return np.clip(a, -a_max, a_max)


class PointReacherEnv:
    """Planar point mass with dense quadratic cost toward a sampled goal.

    State layout: [pos(2), vel(2), goal(2)]. Success means the final
    position is within 0.05 of the goal.
    """

    name = "reacher-dense"

    def __init__(self, dt: float = 0.02, horizon: int = 100,
                 a_max: float = 10.0, random_init: bool = False):
        if not (dt > 0):
            raise ValueError("dt must be positive")
        if not (isinstance(horizon, int) and horizon >= 1):
            raise ValueError("horizon must be a positive integer")
        if not (a_max > 0):
            raise ValueError("a_max must be positive")
        self.dt = float(dt)
        self.horizon = horizon
        self.a_max = float(a_max)
        self.random_init = bool(random_init)
        self._t: int | None = None
        self._success: bool | None = None

    @property
    def observation_dim(self) -> int:
        return 6

    @property
    def action_dim(self) -> int:
        return 2

    def _sample_task(self, rng: np.random.Generator) -> None:
        self._goal = rng.uniform(-1.0, 1.0, 2)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._sample_task(rng)
        self._pos = (rng.uniform(-1.0, 1.0, 2) if self.random_init
                     else np.zeros(2))
        self._vel = np.zeros(2)
        self._t = 0
        self._success = None
        return self.state

    @property
    def state(self) -> np.ndarray:
        return np.concatenate(self._state_parts())

    def _state_parts(self):
        return (self._pos, self._vel, self._goal)

    @property
    def time_index(self) -> int:
        if self._t is None:
            raise RuntimeError("reset the environment first")
        return self._t

    @property
    def done(self) -> bool:
        return self._t is not None and self._t >= self.horizon

    @property
    def success(self) -> bool:
        if self._success is None:
            raise RuntimeError("episode not finished")
        return self._success

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self._t is None:
            raise RuntimeError("reset the environment first")
        if self.done:
            raise RuntimeError("episode is over; reset the environment")
        a = np.clip(np.asarray(action, dtype=np.float64), -self.a_max,
                    self.a_max)
        if a.shape != (2,):
            raise ValueError(f"action must have shape (2,), got {a.shape}")
        dt = self.dt
        self._pos = self._pos + self._vel * dt + 0.5 * a * dt * dt
        self._vel = self._vel + a * dt
        self._t += 1
        reward = self._post_step_reward(a)
        if self.done:
            self._finalize()
        return self.state, float(reward), self.done

    def _post_step_reward(self, a: np.ndarray) -> float:
        dp = self._pos - self._goal
        return -np.sum(dp * dp, axis=-1) - 1e-3 * np.sum(a * a, axis=-1)

    def _finalize(self) -> None:
        self._success = bool(
            np.linalg.norm(self._pos - self._goal) < 0.05)

    # --- trajectory-execution helpers (shared arithmetic, batched over t)

    def _trajectory_rewards(self, pos, vel, acc) -> np.ndarray:
        dp = pos[1:] - self._goal
        return -np.sum(dp * dp, axis=-1) - 1e-3 * np.sum(acc * acc, axis=-1)

    def _stack_states(self, pos, vel) -> np.ndarray:
        n = pos.shape[0]
        return np.concatenate(
            [pos, vel, np.broadcast_to(self._goal, (n, 2))], axis=1)


class ViaPointEnv(PointReacherEnv):
    """Sparse variant: reward is zero except when passing the half-way
    tick (distance to a via point) and the final tick (distance to the
    goal plus a terminal velocity penalty). Success requires both
    distances under 0.05 at their respective times.
    """

    name = "viapoint-sparse"

    def __init__(self, dt: float = 0.02, horizon: int = 100,
                 a_max: float = 10.0, random_init: bool = False):
        if horizon % 2 != 0:
            raise ValueError("via-point horizon must be even")
        super().__init__(dt=dt, horizon=horizon, a_max=a_max,
                         random_init=random_init)

    @property
    def observation_dim(self) -> int:
        return 8

    def _sample_task(self, rng: np.random.Generator) -> None:
        self._goal = rng.uniform(-1.0, 1.0, 2)
        self._via = rng.uniform(-1.0, 1.0, 2)
        self._via_ok: bool | None = None

    def _state_parts(self):
        return (self._pos, self._vel, self._goal, self._via)

    def _post_step_reward(self, a: np.ndarray) -> float:
        if self._t == self.horizon // 2:
            dv = self._pos - self._via
            self._via_ok = bool(np.linalg.norm(dv) < 0.05)
            return -np.sum(dv * dv, axis=-1)
        if self._t == self.horizon:
            dg = self._pos - self._goal
            return (-np.sum(dg * dg, axis=-1)
                    - 0.1 * np.sum(self._vel * self._vel, axis=-1))
        return 0.0

    def _finalize(self) -> None:
        goal_ok = bool(np.linalg.norm(self._pos - self._goal) < 0.05)
        self._success = bool(self._via_ok) and goal_ok

    def _trajectory_rewards(self, pos, vel, acc) -> np.ndarray:
        rewards = np.zeros(pos.shape[0] - 1)
        half = self.horizon // 2
        dv = pos[half] - self._via
        self._via_ok = bool(np.linalg.norm(dv) < 0.05)
        rewards[half - 1] = -np.sum(dv * dv, axis=-1)
        dg = pos[-1] - self._goal
        rewards[-1] = (-np.sum(dg * dg, axis=-1)
                       - 0.1 * np.sum(vel[-1] * vel[-1], axis=-1))
        return rewards

    def _stack_states(self, pos, vel) -> np.ndarray:
        n = pos.shape[0]
        return np.concatenate(
            [pos, vel, np.broadcast_to(self._goal, (n, 2)),
             np.broadcast_to(self._via, (n, 2))], axis=1)


_REGISTRY = {
    PointReacherEnv.name: PointReacherEnv,
    ViaPointEnv.name: ViaPointEnv,
}


def make_env(name: str, **kwargs) -> PointReacherEnv:
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; "
                         f"available: {sorted(_REGISTRY)}") from None
    return cls(**kwargs)


@dataclass
class StepRecord:
    """Per-step results of executing one trajectory."""

    states: np.ndarray      # (T+1, obs_dim) full state at every tick
    actions: np.ndarray     # (T, 2) applied (clipped) accelerations
    rewards: np.ndarray     # (T,)
    success: bool


def execute_trajectory(env: PointReacherEnv, controller: PdController,
                       traj: Trajectory) -> StepRecord:
    """Track a desired trajectory with the PD controller, stepping the
    environment to its end.

    Each step drives toward the next tick's desired state. The rollout
    runs through the compute backend but is bit-identical to the
    track()+step() loop. The trajectory must span exactly the horizon and
    start at the environment's current state (tolerance 1e-6).
    """
    if env._t != 0:
        raise RuntimeError("environment must be freshly reset")
    T = env.horizon
    if traj.pos.shape[1] != T + 1:
        raise ValueError(
            f"trajectory has {traj.pos.shape[1] - 1} steps, "
            f"environment horizon is {T}")
    mismatch = max(np.max(np.abs(traj.pos[:, 0] - env._pos)),
                   np.max(np.abs(traj.vel[:, 0] - env._vel)))
    if mismatch > 1e-6:
        raise ValueError(
            f"trajectory boundary is {mismatch:.3e} away from the "
            f"environment state; condition the primitive on the true "
            f"initial state")
    kernels = get_kernels()
    target_pos = np.ascontiguousarray(traj.pos[:, 1:].T)
    target_vel = np.ascontiguousarray(traj.vel[:, 1:].T)
    pos, vel, acc = kernels.tracking_rollout(
        env._pos, env._vel, target_pos, target_vel,
        controller.kp, controller.kd, env.a_max, env.dt)
    rewards = env._trajectory_rewards(pos, vel, acc)
    env._pos = pos[-1].copy()
    env._vel = vel[-1].copy()
    env._t = T
    env._finalize()
    return StepRecord(states=env._stack_states(pos, vel), actions=acc,
                      rewards=rewards, success=env.success)


class EnvBatch:
    """Fixed-horizon lockstep batch of identical environments.

    reset() consumes the generator exactly like sequential single-env
    resets; step() applies the same update expressions to stacked arrays,
    so a batch run is bit-identical to running the members one by one.
    """

    def __init__(self, name: str, num_envs: int, **kwargs):
        if num_envs < 1:
            raise ValueError("num_envs must be positive")
        self._envs = [make_env(name, **kwargs) for _ in range(num_envs)]
        template = self._envs[0]
        self.num_envs = num_envs
        self.dt = template.dt
        self.horizon = template.horizon
        self.a_max = template.a_max
        self.observation_dim = template.observation_dim
        self.action_dim = template.action_dim
        self._has_via = isinstance(template, ViaPointEnv)
        self._t: int | None = None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        # member envs act as samplers only; the batch owns the dynamics
        states = np.stack([env.reset(rng) for env in self._envs])
        self._pos = states[:, 0:2].copy()
        self._vel = states[:, 2:4].copy()
        self._goal = states[:, 4:6].copy()
        self._via = states[:, 6:8].copy() if self._has_via else None
        self._t = 0
        self._via_ok = None
        self._success: np.ndarray | None = None
        return states

    @property
    def done(self) -> bool:
        return self._t is not None and self._t >= self.horizon

    @property
    def success(self) -> np.ndarray:
        if self._success is None:
            raise RuntimeError("episodes not finished")
        return self._success

    def _states(self) -> np.ndarray:
        parts = [self._pos, self._vel, self._goal]
        if self._has_via:
            parts.append(self._via)
        return np.concatenate(parts, axis=1)

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, bool]:
        if self._t is None:
            raise RuntimeError("reset the batch first")
        if self.done:
            raise RuntimeError("episodes are over; reset the batch")
        a = np.clip(np.asarray(actions, dtype=np.float64), -self.a_max,
                    self.a_max)
        if a.shape != (self.num_envs, 2):
            raise ValueError(
                f"actions must have shape {(self.num_envs, 2)}, got {a.shape}")
        dt = self.dt
        self._pos = self._pos + self._vel * dt + 0.5 * a * dt * dt
        self._vel = self._vel + a * dt
        self._t += 1
        rewards = self._post_step_rewards(a)
        done = self.done
        if done:
            self._finalize()
        return self._states(), rewards, done

    def _post_step_rewards(self, a: np.ndarray) -> np.ndarray:
        if not self._has_via:
            dp = self._pos - self._goal
            return -np.sum(dp * dp, axis=-1) - 1e-3 * np.sum(a * a, axis=-1)
        if self._t == self.horizon // 2:
            dv = self._pos - self._via
            self._via_ok = np.linalg.norm(dv, axis=-1) < 0.05
            return -np.sum(dv * dv, axis=-1)
        if self._t == self.horizon:
            dg = self._pos - self._goal
            return (-np.sum(dg * dg, axis=-1)
                    - 0.1 * np.sum(self._vel * self._vel, axis=-1))
        return np.zeros(self.num_envs)

    def _finalize(self) -> None:
        goal_ok = np.linalg.norm(self._pos - self._goal, axis=-1) < 0.05
        if self._has_via:
            self._success = np.logical_and(self._via_ok, goal_ok)
        else:
            self._success = goal_ok
