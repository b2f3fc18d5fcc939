import math

import numpy as np
import pytest

import oracles
from mprl.mp import (
    MpConfig,
    Trajectory,
    basis_functions,
    build_kernel,
    compute_trajectory,
    dump_trajectory_csv,
    finite_diff_derivatives,
    load_trajectory_csv,
)


def random_params(cfg, rng, scale=1.0):
    return rng.normal(0.0, scale, size=cfg.num_params)


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            MpConfig(num_dof=0, num_basis=5, duration=1.0, num_steps=10)
        with pytest.raises(ValueError):
            MpConfig(num_dof=1, num_basis=0, duration=1.0, num_steps=10)
        with pytest.raises(ValueError):
            MpConfig(num_dof=1, num_basis=5, duration=-1.0, num_steps=10)
        with pytest.raises(ValueError):
            MpConfig(num_dof=1, num_basis=5, duration=1.0, num_steps=0)
        with pytest.raises(ValueError):
            MpConfig(num_dof=1, num_basis=5, duration=1.0, num_steps=10,
                     integration_substeps=0)

    def test_param_layout_sizes(self):
        cfg = MpConfig(num_dof=3, num_basis=4, duration=1.0, num_steps=10)
        assert cfg.num_params_per_dof == 5
        assert cfg.num_params == 15
        assert cfg.dt == pytest.approx(0.1)


class TestKernelTables:
    def setup_method(self):
        self.cfg = MpConfig(num_dof=1, num_basis=5, duration=2.0,
                            num_steps=100)
        self.kernel = build_kernel(self.cfg)

    def test_shapes(self):
        T, N = self.cfg.num_steps, self.cfg.num_basis
        assert self.kernel.pos_basis.shape == (N + 1, T + 1)
        assert self.kernel.vel_basis.shape == (N + 1, T + 1)
        assert self.kernel.pos_map.shape == (N + 1, T + 1)
        assert self.kernel.p1.shape == (T + 1, N)
        assert self.kernel.xi1.shape == (T + 1,)

    def test_phase_starts_at_one_and_decreases(self):
        assert self.kernel.phase[0] == 1.0
        assert np.all(np.diff(self.kernel.phase) < 0)

    def test_basis_rows_normalized(self):
        phi = basis_functions(self.kernel.phase, self.kernel.centers,
                              self.kernel.widths)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, rtol=1e-12)

    def test_basis_value_at_neighbor_center(self):
        c, w = self.kernel.centers, self.kernel.widths
        ov = self.cfg.basis_overlap
        for i in range(len(c) - 1):
            val = math.exp(-0.5 * ((c[i + 1] - c[i]) / w[i]) ** 2)
            assert val == pytest.approx(math.exp(-ov), rel=1e-12)
        # default overlap means that value is one half
        assert math.exp(-ov) == pytest.approx(0.5)

    def test_wronskian_identity(self):
        k = self.cfg.alpha / (2.0 * self.cfg.duration)
        wr = (self.kernel.y1 * self.kernel.dy2
              - self.kernel.dy1 * self.kernel.y2)
        np.testing.assert_allclose(wr, np.exp(-2.0 * k * self.kernel.times),
                                   rtol=1e-13)

    def test_goal_column_closed_form(self):
        k = self.cfg.alpha / (2.0 * self.cfg.duration)
        t = self.kernel.times
        expected = 1.0 - np.exp(-k * t) - k * t * np.exp(-k * t)
        np.testing.assert_allclose(self.kernel.pos_basis[-1], expected,
                                   rtol=1e-10, atol=1e-14)

    def test_boundary_columns_cancel(self):
        # the boundary-corrected map is exactly zero at the first sample
        np.testing.assert_array_equal(self.kernel.pos_map[:, 0], 0.0)
        np.testing.assert_array_equal(self.kernel.vel_map[:, 0], 0.0)
        assert self.kernel.xi1[0] == 1.0
        assert self.kernel.xi2[0] == 0.0
        assert self.kernel.dxi1[0] == 0.0
        assert self.kernel.dxi2[0] == 1.0

    def test_p_integrals_match_simpson_oracle(self):
        c, w = oracles.rbf_centers_widths(
            self.cfg.num_basis, self.cfg.duration, self.cfg.alpha_x,
            self.cfg.basis_overlap)
        np.testing.assert_allclose(c, self.kernel.centers, rtol=1e-14)
        np.testing.assert_allclose(w, self.kernel.widths, rtol=1e-14)
        p1_ref, p2_ref = oracles.simpson_p_integrals(
            self.cfg.duration, self.cfg.alpha, self.cfg.alpha_x, c, w,
            self.kernel.times)
        scale1 = np.abs(p1_ref).max()
        scale2 = np.abs(p2_ref).max()
        assert np.abs(self.kernel.p1 - p1_ref).max() < 5e-5 * scale1
        assert np.abs(self.kernel.p2 - p2_ref).max() < 5e-5 * scale2

    def test_more_substeps_refine_the_quadrature(self):
        ref = build_kernel(MpConfig(
            num_dof=1, num_basis=5, duration=2.0, num_steps=100,
            integration_substeps=200))
        coarse = build_kernel(MpConfig(
            num_dof=1, num_basis=5, duration=2.0, num_steps=100,
            integration_substeps=1))
        err_coarse = np.abs(coarse.p2 - ref.p2).max()
        err_default = np.abs(self.kernel.p2 - ref.p2).max()
        assert err_default < err_coarse / 10


class TestTrajectory:
    def test_matches_rk4_oracle(self, rng):
        for tau in (1.0, 2.3):
            cfg = MpConfig(num_dof=1, num_basis=5, duration=tau,
                           num_steps=100)
            kernel = build_kernel(cfg)
            c, w = oracles.rbf_centers_widths(
                cfg.num_basis, tau, cfg.alpha_x, cfg.basis_overlap)
            for _ in range(3):
                params = random_params(cfg, rng)
                y0 = rng.normal(size=1)
                v0 = rng.normal(size=1)
                traj = compute_trajectory(kernel, params, y0, v0)
                ref = oracles.rk4_tracking_ode(
                    params[None, :-1], params[-1:], y0, v0,
                    np.array([tau]), cfg.alpha, cfg.alpha_x, c, w,
                    num_ode_steps=10_000, out_every=100)
                assert np.abs(traj.pos[0] - ref[0]).max() < 1e-4

    def test_boundary_reproduced_exactly(self, rng):
        cfg = MpConfig(num_dof=3, num_basis=4, duration=1.7, num_steps=50)
        kernel = build_kernel(cfg)
        y0 = rng.normal(size=3)
        v0 = rng.normal(size=3)
        traj = compute_trajectory(kernel, random_params(cfg, rng), y0, v0)
        np.testing.assert_array_equal(traj.pos[:, 0], y0)
        np.testing.assert_array_equal(traj.vel[:, 0], v0)

    def test_linear_in_parameters(self, rng):
        cfg = MpConfig(num_dof=2, num_basis=3, duration=1.0, num_steps=40)
        kernel = build_kernel(cfg)
        zero = np.zeros(cfg.num_dof)
        pa = random_params(cfg, rng)
        pb = random_params(cfg, rng)
        a, b = 0.7, -1.3
        combo = compute_trajectory(kernel, a * pa + b * pb, zero, zero)
        ta = compute_trajectory(kernel, pa, zero, zero)
        tb = compute_trajectory(kernel, pb, zero, zero)
        np.testing.assert_allclose(combo.pos, a * ta.pos + b * tb.pos,
                                   rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(combo.vel, a * ta.vel + b * tb.vel,
                                   rtol=1e-12, atol=1e-12)

    def test_zero_everything_stays_at_rest(self):
        cfg = MpConfig(num_dof=2, num_basis=3, duration=1.0, num_steps=30)
        kernel = build_kernel(cfg)
        traj = compute_trajectory(kernel, np.zeros(cfg.num_params),
                                  np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(traj.pos, 0.0)
        np.testing.assert_array_equal(traj.vel, 0.0)

    def test_converges_to_goal_without_forcing(self, rng):
        cfg = MpConfig(num_dof=2, num_basis=4, duration=2.0, num_steps=80)
        kernel = build_kernel(cfg)
        params = np.zeros(cfg.num_params)
        goals = rng.normal(size=2)
        params[cfg.num_basis] = goals[0]
        params[-1] = goals[1]
        y0 = rng.normal(size=2)
        traj = compute_trajectory(kernel, params, y0, np.zeros(2))
        final_err = np.abs(traj.pos[:, -1] - goals)
        assert np.all(final_err <= 0.01 * np.abs(goals - y0) + 1e-12)

    def test_velocity_matches_position_gradient(self, rng):
        cfg = MpConfig(num_dof=1, num_basis=5, duration=1.5, num_steps=2000)
        kernel = build_kernel(cfg)
        traj = compute_trajectory(kernel, random_params(cfg, rng),
                                  rng.normal(size=1), rng.normal(size=1))
        fd_vel = np.gradient(traj.pos, traj.dt, axis=1)
        scale = np.abs(traj.vel).max()
        interior = slice(1, -1)
        assert np.abs(
            (fd_vel - traj.vel)[:, interior]
        ).max() < 1e-4 * scale

    def test_ode_residual_small(self, rng):
        cfg = MpConfig(num_dof=1, num_basis=5, duration=1.5, num_steps=2000)
        kernel = build_kernel(cfg)
        params = random_params(cfg, rng)
        traj = compute_trajectory(kernel, params, rng.normal(size=1),
                                  rng.normal(size=1))
        k = cfg.alpha / (2.0 * cfg.duration)
        phi = basis_functions(kernel.phase, kernel.centers, kernel.widths)
        force = kernel.phase * (phi @ params[:-1]) / cfg.duration ** 2
        rhs = (k * k * (params[-1] - traj.pos[0])
               - 2.0 * k * traj.vel[0] + force)
        acc = finite_diff_derivatives(traj, 2)[0]
        resid = np.abs(acc - rhs)[2:-2]
        assert resid.max() < 1e-3 * np.abs(rhs).max()

    def test_rejects_wrong_shapes(self, rng):
        cfg = MpConfig(num_dof=2, num_basis=3, duration=1.0, num_steps=10)
        kernel = build_kernel(cfg)
        with pytest.raises(ValueError):
            compute_trajectory(kernel, np.zeros(5), np.zeros(2), np.zeros(2))
        with pytest.raises(ValueError):
            compute_trajectory(kernel, np.zeros(cfg.num_params),
                               np.zeros(3), np.zeros(2))


class TestDerivativesAndCsv:
    def test_third_derivative_of_cubic_exact_interior(self):
        dt = 0.01
        t = np.arange(101) * dt
        traj = Trajectory(pos=(t ** 3)[None, :], vel=(3 * t ** 2)[None, :],
                          dt=dt)
        jerk = finite_diff_derivatives(traj, 3)
        # third differences are exact for cubics, edges included
        np.testing.assert_allclose(jerk[0], 6.0, rtol=1e-6)

    def test_needs_enough_samples(self):
        traj = Trajectory(pos=np.zeros((1, 6)), vel=np.zeros((1, 6)), dt=0.1)
        with pytest.raises(ValueError):
            finite_diff_derivatives(traj, 3)
        with pytest.raises(ValueError):
            finite_diff_derivatives(traj, 0)
        assert finite_diff_derivatives(traj, 2).shape == (1, 6)

    def test_csv_roundtrip_is_identity(self, rng, tmp_path):
        cfg = MpConfig(num_dof=2, num_basis=3, duration=1.0, num_steps=20)
        kernel = build_kernel(cfg)
        traj = compute_trajectory(kernel, random_params(cfg, rng),
                                  rng.normal(size=2), rng.normal(size=2))
        path = tmp_path / "traj.csv"
        dump_trajectory_csv(traj, path)
        back = load_trajectory_csv(path)
        np.testing.assert_array_equal(back.pos, traj.pos)
        np.testing.assert_array_equal(back.vel, traj.vel)
        assert back.dt == pytest.approx(traj.dt, rel=1e-12)
        first = path.read_text().splitlines()[0]
        assert first == "t,dof,pos,vel"
