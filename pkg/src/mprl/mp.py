"""Movement primitives with closed-form trajectory generation.

A second-order critically damped tracking system drives each degree of
freedom toward a goal while a phase-scaled radial-basis forcing term shapes
the transient. Because the system is linear in the basis weights and the
goal, whole trajectories are linear-affine functions of the parameter
vector: position values are inner products of precomputed basis columns
with the per-DoF parameters plus boundary-condition terms. That linearity
is what the rest of the package builds on (trajectory distributions from
parameter distributions, exact segment likelihoods).

Per DoF, with duration tau, attractor rate alpha (critically damped, so
the secondary rate is alpha/4) and k = alpha / (2 tau), the dynamics in
normalized form are

    y'' + 2k y' + k^2 y = k^2 g + f(x(t)) / tau^2,
    f(x) = x * phi_hat(x) . w,      x(t) = exp(-alpha_x t / tau),

where phi_hat is the normalized Gaussian basis evaluated at the phase x.
The homogeneous solutions exp(-kt) and t exp(-kt) and variation of
parameters give every table this module precomputes; the forcing integrals
are evaluated once by trapezoid quadrature on a refined grid.

Parameter layout: per DoF [w_1 .. w_N, g], DoF blocks concatenated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_ALPHA = 25.0
DEFAULT_ALPHA_X = 3.0
# adjacent basis functions cross at exp(-overlap); ln 2 -> 0.5 crossing
DEFAULT_BASIS_OVERLAP = math.log(2.0)


@dataclass(frozen=True)
class MpConfig:
    """Static description of a movement-primitive parameterization.

    num_steps is the number of integration intervals: trajectories carry
    num_steps + 1 samples, dt = duration / num_steps. integration_substeps
    refines the quadrature grid for the forcing integrals only.
    """

    num_dof: int
    num_basis: int
    duration: float
    num_steps: int
    alpha: float = DEFAULT_ALPHA
    alpha_x: float = DEFAULT_ALPHA_X
    basis_overlap: float = DEFAULT_BASIS_OVERLAP
    integration_substeps: int = 10

    def __post_init__(self):
        if self.num_dof < 1:
            raise ValueError("num_dof must be >= 1")
        if self.num_basis < 1:
            raise ValueError("num_basis must be >= 1")
        if not (self.duration > 0):
            raise ValueError("duration must be positive")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if not (self.alpha > 0 and self.alpha_x > 0):
            raise ValueError("alpha and alpha_x must be positive")
        if not (self.basis_overlap > 0):
            raise ValueError("basis_overlap must be positive")
        if self.integration_substeps < 1:
            raise ValueError("integration_substeps must be >= 1")

    @property
    def num_params_per_dof(self) -> int:
        return self.num_basis + 1

    @property
    def num_params(self) -> int:
        return self.num_dof * (self.num_basis + 1)

    @property
    def dt(self) -> float:
        return self.duration / self.num_steps


@dataclass(frozen=True)
class Trajectory:
    """Sampled positions and velocities, (num_dof, num_steps + 1) each."""

    pos: np.ndarray
    vel: np.ndarray
    dt: float

    @property
    def num_dof(self) -> int:
        return self.pos.shape[0]

    @property
    def num_samples(self) -> int:
        return self.pos.shape[1]

    @property
    def duration(self) -> float:
        return self.dt * (self.num_samples - 1)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.num_samples) * self.dt


@dataclass(frozen=True)
class MpKernel:
    """Precomputed per-DoF solution tables on the time grid.

    pos_map / vel_map are the (num_basis + 1, num_steps + 1) matrices whose
    columns map one DoF's parameters to position / velocity at each grid
    time, boundary-condition corrections already folded in. xi1/xi2 (and
    their time derivatives dxi1/dxi2) carry the boundary state itself:

        pos_d(t) = xi1(t) y_b[d] + xi2(t) v_b[d] + pos_map[:, t] . params_d
    """

    config: MpConfig
    times: np.ndarray          # (T+1,)
    phase: np.ndarray          # (T+1,)
    centers: np.ndarray        # (N,) basis centers in phase space
    widths: np.ndarray         # (N,) basis widths in phase space
    y1: np.ndarray             # homogeneous solutions and derivatives
    y2: np.ndarray
    dy1: np.ndarray
    dy2: np.ndarray
    q1: np.ndarray             # goal forcing integrals
    q2: np.ndarray
    dq1: np.ndarray
    dq2: np.ndarray
    p1: np.ndarray             # (T+1, N) basis forcing integrals
    p2: np.ndarray
    dp1: np.ndarray
    dp2: np.ndarray
    pos_basis: np.ndarray      # (N+1, T+1) particular-solution tables
    vel_basis: np.ndarray
    xi1: np.ndarray            # boundary-condition coefficients
    xi2: np.ndarray
    xi3: np.ndarray
    xi4: np.ndarray
    dxi1: np.ndarray
    dxi2: np.ndarray
    dxi3: np.ndarray
    dxi4: np.ndarray
    pos_map: np.ndarray        # (N+1, T+1) parameter-to-position map
    vel_map: np.ndarray

    @property
    def num_dof(self) -> int:
        return self.config.num_dof

    @property
    def num_params(self) -> int:
        return self.config.num_params


def basis_functions(phase: np.ndarray, centers: np.ndarray,
                    widths: np.ndarray) -> np.ndarray:
    """Normalized Gaussian basis evaluated at the given phase values.

    Returns (len(phase), num_basis); rows sum to 1.
    """
    x = np.asarray(phase, dtype=np.float64)[:, None]
    raw = np.exp(-0.5 * ((x - centers[None, :]) / widths[None, :]) ** 2)
    return raw / np.sum(raw, axis=1, keepdims=True)


def _centers_and_widths(config: MpConfig) -> tuple[np.ndarray, np.ndarray]:
    # centers equidistant in time, mapped through the phase; width of each
    # basis set so its value at the neighboring center is exactly
    # exp(-basis_overlap) (0.5 at the default overlap)
    n = config.num_basis
    center_times = np.linspace(0.0, config.duration, n)
    rate = config.alpha_x / config.duration
    centers = np.exp(-rate * center_times)
    if n == 1:
        span = 1.0 - math.exp(-config.alpha_x)
        widths = np.array([0.5 * span])
        return centers, widths
    gaps = np.abs(np.diff(centers))
    gaps = np.append(gaps, gaps[-1])
    widths = gaps / math.sqrt(2.0 * config.basis_overlap)
    return centers, widths


def build_kernel(config: MpConfig) -> MpKernel:
    """Precompute every solution table for the configured grid."""
    tau = config.duration
    T = config.num_steps
    k = config.alpha / (2.0 * tau)
    times = np.linspace(0.0, tau, T + 1)

    rate = config.alpha_x / tau
    phase = np.exp(-rate * times)
    centers, widths = _centers_and_widths(config)

    ekt_neg = np.exp(-k * times)
    ekt_pos = np.exp(k * times)
    y1 = ekt_neg
    y2 = times * ekt_neg
    dy1 = -k * ekt_neg
    dy2 = (1.0 - k * times) * ekt_neg

    q1 = (k * times - 1.0) * ekt_pos + 1.0
    q2 = k * (ekt_pos - 1.0)
    dq1 = (k * k) * times * ekt_pos
    dq2 = (k * k) * ekt_pos

    # forcing integrals on a refined grid, cumulative trapezoid
    S = config.integration_substeps
    fine = np.linspace(0.0, tau, T * S + 1)
    fine_phase = np.exp(-rate * fine)
    fine_basis = basis_functions(fine_phase, centers, widths)
    scaled = fine_phase[:, None] * fine_basis / (tau * tau)
    g2 = np.exp(k * fine)[:, None] * scaled           # integrand of p2
    g1 = fine[:, None] * g2                           # integrand of p1
    h = tau / (T * S)
    p1_fine = np.vstack([
        np.zeros((1, config.num_basis)),
        np.cumsum(0.5 * h * (g1[1:] + g1[:-1]), axis=0),
    ])
    p2_fine = np.vstack([
        np.zeros((1, config.num_basis)),
        np.cumsum(0.5 * h * (g2[1:] + g2[:-1]), axis=0),
    ])
    idx = np.arange(T + 1) * S
    p1 = p1_fine[idx]
    p2 = p2_fine[idx]
    dp1 = g1[idx]
    dp2 = g2[idx]

    pos_basis = np.empty((config.num_basis + 1, T + 1))
    vel_basis = np.empty((config.num_basis + 1, T + 1))
    pos_basis[:-1] = (y2[:, None] * p2 - y1[:, None] * p1).T
    pos_basis[-1] = y2 * q2 - y1 * q1
    vel_basis[:-1] = (dy2[:, None] * p2 - dy1[:, None] * p1).T
    vel_basis[-1] = dy2 * q2 - dy1 * q1

    # boundary-condition coefficients, boundary fixed at the first sample
    y1b, y2b, dy1b, dy2b = y1[0], y2[0], dy1[0], dy2[0]
    den = y1b * dy2b - y2b * dy1b
    xi1 = (dy2b * y1 - dy1b * y2) / den
    xi2 = (y1b * y2 - y2b * y1) / den
    xi3 = -xi1
    xi4 = -xi2
    dxi1 = (dy2b * dy1 - dy1b * dy2) / den
    dxi2 = (y1b * dy2 - y2b * dy1) / den
    dxi3 = -dxi1
    dxi4 = -dxi2

    basis_b = pos_basis[:, 0]
    basis_b_dot = vel_basis[:, 0]
    pos_map = (xi3[None, :] * basis_b[:, None]
               + xi4[None, :] * basis_b_dot[:, None] + pos_basis)
    vel_map = (dxi3[None, :] * basis_b[:, None]
               + dxi4[None, :] * basis_b_dot[:, None] + vel_basis)

    return MpKernel(
        config=config, times=times, phase=phase,
        centers=centers, widths=widths,
        y1=y1, y2=y2, dy1=dy1, dy2=dy2,
        q1=q1, q2=q2, dq1=dq1, dq2=dq2,
        p1=p1, p2=p2, dp1=dp1, dp2=dp2,
        pos_basis=pos_basis, vel_basis=vel_basis,
        xi1=xi1, xi2=xi2, xi3=xi3, xi4=xi4,
        dxi1=dxi1, dxi2=dxi2, dxi3=dxi3, dxi4=dxi4,
        pos_map=pos_map, vel_map=vel_map,
    )


def compute_trajectory(kernel: MpKernel, params: np.ndarray,
                       boundary_pos: np.ndarray,
                       boundary_vel: np.ndarray) -> Trajectory:
    """Map a parameter vector and boundary state to a sampled trajectory.

    params: (num_dof * (num_basis + 1),) laid out per DoF [w_1..w_N, g].
    boundary_pos / boundary_vel: (num_dof,) state at the first sample,
    reproduced exactly by the output.
    """
    cfg = kernel.config
    params = np.asarray(params, dtype=np.float64)
    boundary_pos = np.asarray(boundary_pos, dtype=np.float64)
    boundary_vel = np.asarray(boundary_vel, dtype=np.float64)
    if params.shape != (cfg.num_params,):
        raise ValueError(
            f"params must have shape ({cfg.num_params},), got {params.shape}"
        )
    if boundary_pos.shape != (cfg.num_dof,):
        raise ValueError("boundary_pos must have shape (num_dof,)")
    if boundary_vel.shape != (cfg.num_dof,):
        raise ValueError("boundary_vel must have shape (num_dof,)")
    per_dof = params.reshape(cfg.num_dof, cfg.num_params_per_dof)
    pos = (np.outer(boundary_pos, kernel.xi1)
           + np.outer(boundary_vel, kernel.xi2)
           + per_dof @ kernel.pos_map)
    vel = (np.outer(boundary_pos, kernel.dxi1)
           + np.outer(boundary_vel, kernel.dxi2)
           + per_dof @ kernel.vel_map)
    return Trajectory(pos=pos, vel=vel, dt=cfg.dt)


def finite_diff_derivatives(traj: Trajectory, order: int) -> np.ndarray:
    """order-th time derivative of the positions by direct differencing.

    Central stencils at interior samples, one-sided at the edges; every
    stencil reproduces polynomials up to the derivative's order exactly
    (in particular, cubics have exact third derivatives everywhere).
    Returns (num_dof, num_samples).
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2, or 3")
    if traj.num_samples <= 2 * order:
        raise ValueError(
            f"need more than {2 * order} samples for an order-{order} "
            f"derivative")
    f = traj.pos
    h = traj.dt
    out = np.empty_like(f)
    if order == 1:
        out[:, 1:-1] = (f[:, 2:] - f[:, :-2]) / (2.0 * h)
        out[:, 0] = (-3.0 * f[:, 0] + 4.0 * f[:, 1] - f[:, 2]) / (2.0 * h)
        out[:, -1] = (3.0 * f[:, -1] - 4.0 * f[:, -2] + f[:, -3]) / (2.0 * h)
    elif order == 2:
        h2 = h * h
        out[:, 1:-1] = (f[:, 2:] - 2.0 * f[:, 1:-1] + f[:, :-2]) / h2
        out[:, 0] = (2.0 * f[:, 0] - 5.0 * f[:, 1] + 4.0 * f[:, 2]
                     - f[:, 3]) / h2
        out[:, -1] = (2.0 * f[:, -1] - 5.0 * f[:, -2] + 4.0 * f[:, -3]
                      - f[:, -4]) / h2
    else:
        h3 = h * h * h
        out[:, 2:-2] = (-0.5 * f[:, :-4] + f[:, 1:-3] - f[:, 3:-1]
                        + 0.5 * f[:, 4:]) / h3
        for i in (0, 1):
            out[:, i] = (f[:, i + 3] - 3.0 * f[:, i + 2]
                         + 3.0 * f[:, i + 1] - f[:, i]) / h3
        for i in (-2, -1):
            out[:, i] = (f[:, i] - 3.0 * f[:, i - 1] + 3.0 * f[:, i - 2]
                         - f[:, i - 3]) / h3
    return out


def dump_trajectory_csv(traj: Trajectory, path) -> None:
    """Write `t,dof,pos,vel` rows, time-major then DoF, full precision."""
    with open(path, "w") as fh:
        fh.write("t,dof,pos,vel\n")
        times = traj.times
        for t_idx in range(traj.num_samples):
            t = times[t_idx]
            for d in range(traj.num_dof):
                fh.write(
                    f"{t:.17g},{d},{traj.pos[d, t_idx]:.17g},"
                    f"{traj.vel[d, t_idx]:.17g}\n"
                )


def load_trajectory_csv(path) -> Trajectory:
    """Inverse of dump_trajectory_csv."""
    rows = np.genfromtxt(path, delimiter=",", names=True)
    rows = np.atleast_1d(rows)
    dofs = rows["dof"].astype(int)
    num_dof = int(dofs.max()) + 1
    if len(rows) % num_dof != 0:
        raise ValueError("malformed trajectory CSV")
    num_samples = len(rows) // num_dof
    pos = rows["pos"].reshape(num_samples, num_dof).T.copy()
    vel = rows["vel"].reshape(num_samples, num_dof).T.copy()
    times = rows["t"].reshape(num_samples, num_dof)[:, 0]
    dt = float(times[1] - times[0]) if num_samples > 1 else 0.0
    return Trajectory(pos=pos, vel=vel, dt=dt)
