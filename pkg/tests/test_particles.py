"""Trajectory integration, ensemble advancement, density estimation."""

import numpy as np
import pytest

from newtonflow import (GridSpec, SingularJacobian, WorkingDomain,
                        advance_ensemble, empirical_density,
                        fisher_velocity_field, integrate, linear_decay_field,
                        make_gradient_field, sample_initial)
from newtonflow.particles import ParticleEnsemble, save_ensemble


def zero_field(dim):
    return make_gradient_field(lambda x: np.zeros_like(x), dim=dim)


class TestIntegrate:
    def test_euler_single_step_formula(self):
        traj = integrate(linear_decay_field(1), [2.0], dt=0.1, t_end=0.1,
                         method="euler")
        assert traj.states[-1][0] == pytest.approx(2.0 * 0.9, rel=1e-15)

    def test_rk4_exponential_decay(self):
        traj = integrate(linear_decay_field(1), [1.0], dt=0.01, t_end=1.0)
        assert abs(traj.final_state[0] - np.exp(-1.0)) <= 1e-8

    def test_states_recorded_every_step(self):
        traj = integrate(linear_decay_field(2), [1.0, -1.0], dt=0.25,
                         t_end=1.0)
        np.testing.assert_allclose(traj.times, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert traj.states.shape == (5, 2)

    def test_final_time_within_dt_of_horizon(self):
        traj = integrate(linear_decay_field(1), [1.0], dt=0.3, t_end=1.0)
        assert abs(traj.times[-1] - 1.0) <= 0.3

    def test_fisher_flow_reaches_mle(self, reference_dataset, reference_mle):
        field = fisher_velocity_field(reference_dataset)
        traj = integrate(field, np.zeros(3), dt=0.05, t_end=10.0)
        assert np.linalg.norm(traj.final_state - reference_mle.beta_hat) <= 1e-4

    def test_escape_truncates_trajectory(self):
        # outward drift leaves the unit box quickly
        field = make_gradient_field(lambda x: x, dim=1)
        domain = WorkingDomain([0.0], [1.0])
        traj = integrate(field, [0.5], dt=0.5, t_end=5.0, domain=domain)
        assert traj.escaped
        assert traj.escape_time is not None
        assert np.all((traj.states >= 0.0) & (traj.states <= 1.0))

    def test_field_error_carries_failure_time(self):
        def bad(x):
            if x[0] > 1.2:
                raise SingularJacobian(x)
            return x

        field = make_gradient_field(bad, dim=1)
        with pytest.raises(SingularJacobian) as err:
            integrate(field, [1.0], dt=0.25, t_end=5.0, method="euler")
        assert err.value.time is not None

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            integrate(linear_decay_field(1), [1.0], dt=-0.1, t_end=1.0)


class TestSampleInitial:
    def test_gaussian_mean_within_clt_bound(self):
        domain = WorkingDomain([-6.0, -6.0], [6.0, 6.0])
        ens = sample_initial(domain, "gaussian", 10**5, seed=20,
                             mean=[0.0, 0.0], cov=1.0)
        bound = 3.0 / np.sqrt(10**5)
        assert np.all(np.abs(ens.positions.mean(axis=0)) <= bound)

    def test_uniform_halves_within_binomial_bound(self):
        domain = WorkingDomain([0.0], [1.0])
        n = 4 * 10**4
        ens = sample_initial(domain, "uniform", n, seed=21)
        left = int((ens.positions[:, 0] < 0.5).sum())
        sigma = np.sqrt(n * 0.25)
        assert abs(left - n / 2) <= 3 * sigma

    def test_single_point_ensemble(self):
        domain = WorkingDomain([0.0], [1.0])
        a = sample_initial(domain, "gaussian", 1, seed=22, mean=[0.5],
                           cov=0.01)
        b = sample_initial(domain, "gaussian", 1, seed=22, mean=[0.5],
                           cov=0.01)
        assert a.count == 1
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_non_spd_covariance_rejected(self):
        domain = WorkingDomain([-1.0, -1.0], [1.0, 1.0])
        with pytest.raises(ValueError):
            sample_initial(domain, "gaussian", 10, seed=0, mean=[0.0, 0.0],
                           cov=np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_draws_stay_inside_domain(self):
        domain = WorkingDomain([-0.5], [0.5])
        ens = sample_initial(domain, "gaussian", 5000, seed=23, mean=[0.0],
                             cov=0.09)
        assert np.all(domain.contains(ens.positions))

    def test_mahalanobis_truncation(self):
        domain = WorkingDomain([-5.0], [5.0])
        ens = sample_initial(domain, "gaussian", 5000, seed=24, mean=[0.0],
                             cov=1.0, truncate=2.0)
        assert np.abs(ens.positions).max() <= 2.0


class TestAdvanceEnsemble:
    def test_zero_field_is_identity(self):
        domain = WorkingDomain([-1.0], [1.0])
        ens = sample_initial(domain, "uniform", 100, seed=25)
        moved, escaped = advance_ensemble(ens, zero_field(1), dt=0.1,
                                          t_end=1.0, domain=domain)
        np.testing.assert_array_equal(moved.positions, ens.positions)
        assert escaped == 0

    def test_contraction_matches_analytic_flow(self):
        # v = -x: mean contracts like mu e^{-t}, CLT oracle for the bound
        mu, sigma, n, t = 0.4, 0.1, 10**4, 1.0
        domain = WorkingDomain([-2.0], [2.0])
        ens = sample_initial(domain, "gaussian", n, seed=26, mean=[mu],
                             cov=sigma**2)
        moved, escaped = advance_ensemble(ens, linear_decay_field(1),
                                          dt=0.01, t_end=t, domain=domain)
        assert escaped == 0
        expected = mu * np.exp(-t)
        bound = 3.0 * sigma * np.exp(-t) / np.sqrt(n)
        assert abs(moved.positions.mean() - expected) <= bound

    def test_fisher_flow_concentrates_near_mle(self, reference_dataset,
                                               reference_mle):
        field = fisher_velocity_field(reference_dataset)
        grid = GridSpec([-1.025] * 3, [0.05] * 3, (41,) * 3)
        ens = sample_initial(grid, "gaussian", 2000, seed=27,
                             mean=reference_mle.beta_hat, cov=0.05**2 * np.eye(3))
        moved, _ = advance_ensemble(ens, field, dt=0.02, t_end=2.0,
                                    domain=grid.as_domain())
        dist = np.linalg.norm(moved.positions - reference_mle.beta_hat, axis=1)
        assert (dist <= 0.05).mean() >= 0.99

    def test_commutes_with_particle_permutation(self):
        domain = WorkingDomain([-3.0], [3.0])
        ens = sample_initial(domain, "gaussian", 500, seed=28, mean=[0.0],
                             cov=0.25)
        perm = np.random.default_rng(29).permutation(500)
        shuffled = ParticleEnsemble(ens.positions[perm], ens.time, ens.seed)
        a, _ = advance_ensemble(ens, linear_decay_field(1), 0.05, 0.5)
        b, _ = advance_ensemble(shuffled, linear_decay_field(1), 0.05, 0.5)
        np.testing.assert_array_equal(a.positions[perm], b.positions)

    def test_escapes_removed_and_counted(self):
        field = make_gradient_field(lambda x: np.ones_like(x), dim=1)
        domain = WorkingDomain([0.0], [1.0])
        ens = sample_initial(domain, "uniform", 1000, seed=30)
        moved, escaped = advance_ensemble(ens, field, dt=0.1, t_end=0.5,
                                          domain=domain)
        assert escaped > 0
        assert moved.count == 1000 - escaped
        assert np.all(domain.contains(moved.positions))


class TestEmpiricalDensity:
    def test_single_particle_single_cell(self):
        grid = GridSpec([0.0], [0.1], (10,))
        ens = ParticleEnsemble(np.array([[0.55]]), 0.0, 0)
        rho = empirical_density(ens, grid)
        assert rho.values[5] == pytest.approx(1.0 / 0.1)
        assert np.count_nonzero(rho.values) == 1

    def test_mass_is_one(self):
        grid = GridSpec([-4.0], [0.05], (160,))
        ens = sample_initial(grid, "gaussian", 12345, seed=31, mean=[0.0],
                             cov=1.0)
        for smoothing in ("histogram", "gaussian_kernel"):
            rho = empirical_density(ens, grid, smoothing)
            assert abs(rho.mass() - 1.0) <= 1e-12

    def test_large_sample_matches_cell_averaged_gaussian(self):
        from scipy.special import erf

        grid = GridSpec([-4.0], [0.05], (160,))
        ens = sample_initial(grid, "gaussian", 10**6, seed=32, mean=[0.0],
                             cov=1.0)
        rho = empirical_density(ens, grid)
        cdf = 0.5 * (1.0 + erf(grid.axis_faces(0) / np.sqrt(2.0)))
        oracle = np.diff(cdf) / 0.05
        oracle /= oracle.sum() * 0.05  # sampling was confined to the box
        assert np.abs(rho.values - oracle).sum() * 0.05 <= 0.02

    def test_empty_ensemble_rejected(self):
        grid = GridSpec([0.0], [0.1], (10,))
        with pytest.raises(ValueError):
            empirical_density(ParticleEnsemble(np.empty((0, 1)), 0.0, 0), grid)

    def test_uncovered_support_rejected(self):
        grid = GridSpec([0.0], [0.1], (10,))
        ens = ParticleEnsemble(np.array([[2.0]]), 0.0, 0)
        with pytest.raises(ValueError):
            empirical_density(ens, grid)

    def test_kernel_smoothing_spreads_mass(self):
        grid = GridSpec([0.0], [0.1], (10,))
        ens = ParticleEnsemble(np.array([[0.55]]), 0.0, 0)
        rho = empirical_density(ens, grid, "gaussian_kernel")
        assert np.count_nonzero(rho.values) > 1
        assert abs(rho.mass() - 1.0) <= 1e-12


class TestIntegratorOrders:
    def test_rk4_fourth_order_ratio(self):
        exact = np.exp(-1.0)
        errs = [abs(integrate(linear_decay_field(1), [1.0], dt, 1.0,
                              "rk4").final_state[0] - exact)
                for dt in (0.1, 0.05)]
        assert 1 / 20 <= errs[1] / errs[0] <= 1 / 12

    def test_euler_first_order_ratio(self):
        exact = np.exp(-1.0)
        errs = [abs(integrate(linear_decay_field(1), [1.0], dt, 1.0,
                              "euler").final_state[0] - exact)
                for dt in (0.1, 0.05)]
        assert 0.4 <= errs[1] / errs[0] <= 0.6


class TestEnsembleExport:
    def test_csv_layout(self, tmp_path):
        ens = ParticleEnsemble(np.array([[0.1, 0.2], [0.3, 0.4]]), 1.5, 0)
        path = tmp_path / "ens.csv"
        save_ensemble(ens, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,x1,x2"
        assert lines[1].startswith("1.5,")
        assert len(lines) == 3
