"""Conditional Gaussian policies.

EpisodicPolicy maps an episode's initial observation to a full-covariance
Gaussian over movement-primitive parameters: a shared feature trunk
(possibly empty, making the heads linear in the observation) feeds
a mean head (scaled by weight_scale) and a Cholesky head whose diagonal
passes through a smooth positive map offset so that a freshly initialized
policy emits exactly initial_std. StepPolicy is the factorized Gaussian
per-step head for the step-based baseline.

Besides the public predict()/step_log_prob() entry points, this module
exposes batched forward/backward passes that the learners drive directly;
backward consumes gradients w.r.t. the predicted mean and the raw
Cholesky factor and returns gradients aligned with parameters().
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian import ParamGaussian
from .nets import GradientTape, Mlp, backward, forward, init_mlp


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y: float) -> float:
    if not (y > 0):
        raise ValueError("softplus_inv needs a positive argument")
    return float(np.log(np.expm1(y)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class EpisodicPolicy:
    """Initial-state conditioned Gaussian over MP parameters."""

    trunk: Mlp
    mean_head: Mlp
    chol_head: Mlp | None            # None when covariance is state-free
    chol_free: np.ndarray | None     # raw entries when state-free
    num_mp_params: int
    weight_scale: float
    initial_std: float
    diagonal_only: bool

    def __post_init__(self):
        if not (self.weight_scale > 0):
            raise ValueError("weight_scale must be positive")
        if not (self.initial_std > 0):
            raise ValueError("initial_std must be positive")
        m = self.num_mp_params
        expected = m if self.diagonal_only else m * (m + 1) // 2
        head_dim = (self.chol_head.out_dim if self.chol_head is not None
                    else self.chol_free.shape[0])
        if head_dim != expected:
            raise ValueError("cholesky head width mismatch")

    @property
    def state_independent_cov(self) -> bool:
        return self.chol_head is None

    @property
    def diag_offset(self) -> float:
        return softplus_inv(self.initial_std)

    def parameters(self) -> list[np.ndarray]:
        out = self.trunk.parameters() + self.mean_head.parameters()
        if self.chol_head is not None:
            out += self.chol_head.parameters()
        else:
            out.append(self.chol_free)
        return out


def init_episodic_policy(state_dim: int, num_mp_params: int, hidden,
                         activation: str, rng: np.random.Generator,
                         weight_scale: float = 1.0,
                         initial_std: float = 1.0,
                         diagonal_only: bool = False,
                         state_independent_cov: bool = False,
                         ) -> EpisodicPolicy:
    hidden = tuple(int(h) for h in hidden)
    # No hidden layers -> identity trunk; the heads become linear maps of
    # the raw state, which is the right capacity for tasks whose optimal
    # parameters are (near-)linear in the context.
    trunk = init_mlp((state_dim, *hidden), activation, rng,
                     final_activation=True)
    feat = hidden[-1] if hidden else state_dim
    m = num_mp_params
    chol_dim = m if diagonal_only else m * (m + 1) // 2
    mean_head = init_mlp((feat, m), activation, rng, out_gain=0.01)
    if state_independent_cov:
        chol_head = None
        chol_free = np.zeros(chol_dim)
    else:
        chol_head = init_mlp((feat, chol_dim), activation, rng, out_gain=0.01)
        chol_free = None
    return EpisodicPolicy(trunk=trunk, mean_head=mean_head,
                          chol_head=chol_head, chol_free=chol_free,
                          num_mp_params=m, weight_scale=weight_scale,
                          initial_std=initial_std,
                          diagonal_only=diagonal_only)


@dataclass
class EpisodicForward:
    """Batched prediction with everything backward() needs."""

    states: np.ndarray               # (B, state_dim)
    trunk_tape: GradientTape
    mean_tape: GradientTape
    chol_tape: GradientTape | None
    raw_chol_entries: np.ndarray     # (B, P) head outputs / free params
    mean: np.ndarray                 # (B, m)
    chol: np.ndarray                 # (B, m, m)


def _tril_layout(m: int, diagonal_only: bool):
    if diagonal_only:
        rows = np.arange(m)
        cols = np.arange(m)
    else:
        rows, cols = np.tril_indices(m)
    return rows, cols, rows == cols


def episodic_forward(policy: EpisodicPolicy,
                     states: np.ndarray) -> EpisodicForward:
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    feats, trunk_tape = forward(policy.trunk, states)
    mean_raw, mean_tape = forward(policy.mean_head, feats)
    mean = policy.weight_scale * mean_raw
    B = states.shape[0]
    m = policy.num_mp_params
    if policy.chol_head is not None:
        entries, chol_tape = forward(policy.chol_head, feats)
    else:
        entries = np.broadcast_to(policy.chol_free, (B, policy.chol_free.shape[0])).copy()
        chol_tape = None
    rows, cols, diag_mask = _tril_layout(m, policy.diagonal_only)
    chol = np.zeros((B, m, m))
    chol[:, rows, cols] = entries
    d = np.arange(m)
    chol[:, d, d] = softplus(entries[:, diag_mask] + policy.diag_offset)
    return EpisodicForward(states=states, trunk_tape=trunk_tape,
                           mean_tape=mean_tape, chol_tape=chol_tape,
                           raw_chol_entries=entries, mean=mean, chol=chol)


def episodic_backward(policy: EpisodicPolicy, fwd: EpisodicForward,
                      g_mean: np.ndarray, g_chol: np.ndarray,
                      ) -> list[np.ndarray]:
    """Gradients w.r.t. parameters() from gradients w.r.t. mean and factor.

    g_chol is taken on the full (B, m, m) factor; entries outside the
    lower triangle are ignored (the factor does not depend on them).
    """
    m = policy.num_mp_params
    rows, cols, diag_mask = _tril_layout(m, policy.diagonal_only)
    entries = fwd.raw_chol_entries
    g_entries = np.asarray(g_chol, dtype=np.float64)[:, rows, cols].copy()
    d_diag = sigmoid(entries[:, diag_mask] + policy.diag_offset)
    g_entries[:, diag_mask] *= d_diag

    mean_grads, g_feat_mean = backward(policy.mean_head, fwd.mean_tape,
                                       policy.weight_scale * np.asarray(g_mean))
    if policy.chol_head is not None:
        chol_grads, g_feat_chol = backward(policy.chol_head, fwd.chol_tape,
                                           g_entries)
        tail = chol_grads
        g_feat = g_feat_mean + g_feat_chol
    else:
        tail = [g_entries.sum(axis=0)]
        g_feat = g_feat_mean
    trunk_grads, _ = backward(policy.trunk, fwd.trunk_tape, g_feat)
    return trunk_grads + mean_grads + tail


def predict(policy: EpisodicPolicy, state: np.ndarray) -> ParamGaussian:
    """Deterministic Gaussian over MP parameters for one initial state."""
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 1 or state.shape[0] != policy.trunk.in_dim:
        raise ValueError(
            f"state must have shape ({policy.trunk.in_dim},), got {state.shape}")
    fwd = episodic_forward(policy, state[None, :])
    return ParamGaussian(mean=fwd.mean[0], chol=fwd.chol[0])


@dataclass
class StepPolicy:
    """Factorized Gaussian over per-step actions."""

    trunk: Mlp
    mean_head: Mlp
    log_std: np.ndarray              # (action_dim,) state independent

    @property
    def action_dim(self) -> int:
        return self.mean_head.out_dim

    def parameters(self) -> list[np.ndarray]:
        return self.trunk.parameters() + self.mean_head.parameters() + [self.log_std]


def init_step_policy(state_dim: int, action_dim: int, hidden,
                     activation: str, rng: np.random.Generator,
                     init_log_std: float = 0.0) -> StepPolicy:
    hidden = tuple(int(h) for h in hidden)
    trunk = init_mlp((state_dim, *hidden), activation, rng,
                     final_activation=True)
    mean_head = init_mlp((hidden[-1], action_dim), activation, rng,
                         out_gain=0.01)
    return StepPolicy(trunk=trunk, mean_head=mean_head,
                      log_std=np.full(action_dim, float(init_log_std)))


@dataclass
class StepForward:
    states: np.ndarray
    trunk_tape: GradientTape
    mean_tape: GradientTape
    mean: np.ndarray                 # (B, action_dim)


def step_forward(policy: StepPolicy, states: np.ndarray) -> StepForward:
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    feats, trunk_tape = forward(policy.trunk, states)
    mean, mean_tape = forward(policy.mean_head, feats)
    return StepForward(states=states, trunk_tape=trunk_tape,
                       mean_tape=mean_tape, mean=mean)


def step_backward(policy: StepPolicy, fwd: StepForward,
                  g_mean: np.ndarray) -> list[np.ndarray]:
    """Gradients for trunk+head parameters (log_std handled by callers,
    whose losses depend on it in closed form)."""
    mean_grads, g_feat = backward(policy.mean_head, fwd.mean_tape,
                                  np.asarray(g_mean, dtype=np.float64))
    trunk_grads, _ = backward(policy.trunk, fwd.trunk_tape, g_feat)
    return trunk_grads + mean_grads


def diag_gauss_log_prob(mean: np.ndarray, log_std: np.ndarray,
                        action: np.ndarray) -> np.ndarray:
    """Factorized Gaussian log density; broadcasts over leading axes."""
    z = (action - mean) / np.exp(log_std)
    return (-0.5 * np.sum(z * z, axis=-1)
            - np.sum(log_std)
            - 0.5 * mean.shape[-1] * math.log(2.0 * math.pi))


def step_log_prob(policy: StepPolicy, state: np.ndarray,
                  action: np.ndarray) -> float:
    """Log density of one action at one state."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (policy.action_dim,):
        raise ValueError("action shape mismatch")
    fwd = step_forward(policy, np.asarray(state, dtype=np.float64)[None, :])
    return float(diag_gauss_log_prob(fwd.mean[0], policy.log_std, action))


def _mlp_payload(prefix: str, net: Mlp) -> dict:
    out = {
        f"{prefix}_sizes": np.asarray(net.sizes, dtype=np.int64),
        f"{prefix}_meta": np.array([
            net.activation,
            "final_act" if net.final_activation else "linear"]),
    }
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}_w{l}"] = w
        out[f"{prefix}_b{l}"] = b
    return out


def _mlp_from_payload(prefix: str, data) -> Mlp:
    sizes = tuple(int(s) for s in data[f"{prefix}_sizes"])
    n_layers = len(sizes) - 1
    return Mlp(
        sizes=sizes,
        activation=str(data[f"{prefix}_meta"][0]),
        weights=[data[f"{prefix}_w{l}"].astype(np.float64)
                 for l in range(n_layers)],
        biases=[data[f"{prefix}_b{l}"].astype(np.float64)
                for l in range(n_layers)],
        final_activation=str(data[f"{prefix}_meta"][1]) == "final_act")


def save_policy(policy, path) -> None:
    """Serialize either policy kind into one npz container."""
    if isinstance(policy, EpisodicPolicy):
        payload = {
            "kind": np.array("episodic"),
            "scalars": np.array([policy.num_mp_params, policy.weight_scale,
                                 policy.initial_std,
                                 float(policy.diagonal_only)]),
        }
        payload.update(_mlp_payload("trunk", policy.trunk))
        payload.update(_mlp_payload("mean", policy.mean_head))
        if policy.chol_head is not None:
            payload.update(_mlp_payload("chol", policy.chol_head))
        else:
            payload["chol_free"] = policy.chol_free
    elif isinstance(policy, StepPolicy):
        payload = {"kind": np.array("step"), "log_std": policy.log_std}
        payload.update(_mlp_payload("trunk", policy.trunk))
        payload.update(_mlp_payload("mean", policy.mean_head))
    else:
        raise TypeError(f"cannot serialize {type(policy).__name__}")
    np.savez(path, **payload)


def load_policy(path):
    """Inverse of save_policy; returns the matching policy kind."""
    data = np.load(path, allow_pickle=False)
    kind = str(data["kind"])
    trunk = _mlp_from_payload("trunk", data)
    mean_head = _mlp_from_payload("mean", data)
    if kind == "step":
        return StepPolicy(trunk=trunk, mean_head=mean_head,
                          log_std=data["log_std"].astype(np.float64))
    scalars = data["scalars"]
    if "chol_free" in data:
        chol_head, chol_free = None, data["chol_free"].astype(np.float64)
    else:
        chol_head, chol_free = _mlp_from_payload("chol", data), None
    return EpisodicPolicy(trunk=trunk, mean_head=mean_head,
                          chol_head=chol_head, chol_free=chol_free,
                          num_mp_params=int(scalars[0]),
                          weight_scale=float(scalars[1]),
                          initial_std=float(scalars[2]),
                          diagonal_only=bool(scalars[3]))
