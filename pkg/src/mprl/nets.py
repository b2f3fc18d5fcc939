"""Small feed-forward networks with explicit reverse-mode gradients.

Everything is double precision and hand-differentiated: a forward pass
caches per-layer inputs and pre-activations in a GradientTape, and
backward() replays the chain rule exactly. That keeps the whole policy
gradient chain (networks, covariance maps, projections, likelihoods)
checkable against finite differences without an autodiff dependency.

Weights are orthogonally initialized (gain 1 for hidden layers, 0.01 for
linear outputs), biases zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def tanh_act(x):
    return np.tanh(x)


def tanh_deriv(pre):
    t = np.tanh(pre)
    return 1.0 - t * t


def relu_act(x):
    return np.maximum(x, 0.0)


def relu_deriv(pre):
    return (pre > 0.0).astype(np.float64)


_ACTIVATIONS = {
    "tanh": (tanh_act, tanh_deriv),
    "relu": (relu_act, relu_deriv),
}


@dataclass
class Mlp:
    """Dense network; activation on hidden layers, identity output unless
    final_activation is set (feature trunks)."""

    sizes: tuple[int, ...]
    activation: str
    weights: list[np.ndarray]      # (out_l, in_l) per layer
    biases: list[np.ndarray]       # (out_l,) per layer
    final_activation: bool = False

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.sizes) - 1:
            raise ValueError("layer count mismatch")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[l + 1], self.sizes[l]):
                raise ValueError(f"weight {l} has shape {w.shape}, "
                                 f"expected {(self.sizes[l + 1], self.sizes[l])}")
            if b.shape != (self.sizes[l + 1],):
                raise ValueError(f"bias {l} shape mismatch")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("non-finite parameters")

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        """Live parameter arrays, weights and biases interleaved per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass
class GradientTape:
    """Cached activations from one forward pass."""

    inputs: list[np.ndarray]       # input to each layer, (B, in_l)
    pre_acts: list[np.ndarray]     # pre-activation of each layer, (B, out_l)
    batched: bool


def orthogonal(rng: np.random.Generator, rows: int, cols: int,
               gain: float) -> np.ndarray:
    """Orthogonal (semi-orthogonal for non-square) matrix scaled by gain."""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(sizes, activation: str, rng: np.random.Generator,
             hidden_gain: float = 1.0, out_gain: float = 0.01,
             final_activation: bool = False) -> Mlp:
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 1 or any(s < 1 for s in sizes):
        raise ValueError("sizes must be positive integers")
    weights = []
    biases = []
    n_layers = len(sizes) - 1
    for l in range(n_layers):
        last_linear = (l == n_layers - 1) and not final_activation
        gain = out_gain if last_linear else hidden_gain
        weights.append(orthogonal(rng, sizes[l + 1], sizes[l], gain))
        biases.append(np.zeros(sizes[l + 1]))
    return Mlp(sizes=sizes, activation=activation, weights=weights,
               biases=biases, final_activation=final_activation)


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, GradientTape]:
    """Evaluate the network; accepts (in,) or (B, in)."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.shape[1] != net.in_dim:
        raise ValueError(f"input width {h.shape[1]}, expected {net.in_dim}")
    act, _ = _ACTIVATIONS[net.activation]
    n_layers = len(net.weights)
    inputs = []
    pre_acts = []
    for l in range(n_layers):
        inputs.append(h)
        pre = h @ net.weights[l].T + net.biases[l]
        pre_acts.append(pre)
        activated = l < n_layers - 1 or net.final_activation
        h = act(pre) if activated else pre
    tape = GradientTape(inputs=inputs, pre_acts=pre_acts, batched=batched)
    return (h if batched else h[0]), tape


def backward(net: Mlp, tape: GradientTape, output_grad: np.ndarray,
             ) -> tuple[list[np.ndarray], np.ndarray]:
    """Exact gradients for one forward pass.

    Returns (param_grads aligned with net.parameters(), input_grad).
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if not tape.batched:
        g = g[None, :]
    if not net.weights:                 # identity net: gradient passes through
        if g.shape[1] != net.in_dim:
            raise ValueError("output_grad shape mismatch with tape")
        return [], (g if tape.batched else g[0])
    if g.shape != tape.pre_acts[-1].shape:
        raise ValueError("output_grad shape mismatch with tape")
    _, deriv = _ACTIVATIONS[net.activation]
    n_layers = len(net.weights)
    w_grads: list[np.ndarray] = [None] * n_layers
    b_grads: list[np.ndarray] = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        activated = l < n_layers - 1 or net.final_activation
        g_pre = g * deriv(tape.pre_acts[l]) if activated else g
        w_grads[l] = g_pre.T @ tape.inputs[l]
        b_grads[l] = g_pre.sum(axis=0)
        g = g_pre @ net.weights[l]
    grads = []
    for wl, bl in zip(w_grads, b_grads):
        grads.append(wl)
        grads.append(bl)
    return grads, (g if tape.batched else g[0])


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


def adam_init(params: list[np.ndarray]) -> AdamState:
    return AdamState(m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, applied to the arrays in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter/gradient/state length mismatch")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def save_mlp(net: Mlp, path) -> None:
    """Serialize layer shapes and row-major values (npz container)."""
    payload = {
        "sizes": np.asarray(net.sizes, dtype=np.int64),
        "meta": np.array([net.activation,
                          "final_act" if net.final_activation else "linear"]),
    }
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        payload[f"w{l}"] = w
        payload[f"b{l}"] = b
    np.savez(path, **payload)


def load_mlp(path) -> Mlp:
    data = np.load(path, allow_pickle=False)
    sizes = tuple(int(s) for s in data["sizes"])
    activation = str(data["meta"][0])
    final_activation = str(data["meta"][1]) == "final_act"
    n_layers = len(sizes) - 1
    weights = [data[f"w{l}"].astype(np.float64) for l in range(n_layers)]
    biases = [data[f"b{l}"].astype(np.float64) for l in range(n_layers)]
    return Mlp(sizes=sizes, activation=activation, weights=weights,
               biases=biases, final_activation=final_activation)
