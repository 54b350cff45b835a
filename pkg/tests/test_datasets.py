"""Data generators: frozen signal values, noise mechanisms, GP sampling."""

import numpy as np
import pytest
from scipy import integrate

from cagm.datasets import (
    GpSpec,
    MultiFidelitySpec,
    base_signal,
    hetero_envelope,
    mean_high,
    mean_low,
    mf_joint_moments,
    multifidelity_dataset,
    noisy_regression_dataset,
    rbf_kernel,
    sample_gp,
    signal_std,
)
from cagm.errors import ConfigError, DimensionError, NotPsdError


class TestBaseSignal:
    def test_frozen_value_at_kink(self):
        # log(10 * 0.03 + ... ) -> s(0.03) = 0.03: log(0.3) * sin(0.03 pi)
        expected = np.log(0.3) * np.sin(0.03 * np.pi)
        np.testing.assert_allclose(base_signal(0.03), expected, rtol=1e-14)
        np.testing.assert_allclose(expected, -0.11330384989647552, rtol=1e-12)

    def test_symmetric_about_kink(self):
        np.testing.assert_allclose(base_signal(0.03 + 0.4), base_signal(0.03 - 0.4), rtol=1e-14)

    def test_signal_std_matches_quadrature_oracle(self):
        def g(x):
            s = abs(x - 0.03) + 0.03
            return np.log(10 * s) * np.sin(np.pi * s)

        # split at the kink so quad converges cleanly
        m1, _ = integrate.quad(g, -2, 0.03, limit=200)
        m2, _ = integrate.quad(g, 0.03, 2, limit=200)
        q1, _ = integrate.quad(lambda x: g(x) ** 2, -2, 0.03, limit=200)
        q2, _ = integrate.quad(lambda x: g(x) ** 2, 0.03, 2, limit=200)
        mean = (m1 + m2) / 4.0
        oracle = np.sqrt((q1 + q2) / 4.0 - mean**2)
        np.testing.assert_allclose(signal_std(), oracle, rtol=1e-6)

    def test_envelope_frozen_value(self):
        np.testing.assert_allclose(hetero_envelope(0.03), 0.5 * np.exp(-0.06), rtol=1e-14)
        np.testing.assert_allclose(hetero_envelope(0.03), 0.47088226679, rtol=1e-9)


class TestNoisyRegression:
    def test_zero_noise_lies_on_curve(self):
        ds = noisy_regression_dataset("homoscedastic", 50, np.random.default_rng(0),
                                      noise_std=0.0)
        np.testing.assert_allclose(ds.y[:, 0], base_signal(ds.x[:, 0]), rtol=1e-14)

    def test_default_homoscedastic_scale_is_five_percent(self):
        ds = noisy_regression_dataset("homoscedastic", 20000, np.random.default_rng(1))
        resid = ds.y[:, 0] - base_signal(ds.x[:, 0])
        target = 0.05 * signal_std()
        assert abs(resid.std() - target) / target < 0.05
        assert ds.meta["noise_std"] == pytest.approx(target)

    def test_heteroscedastic_scale_tracks_envelope(self):
        ds = noisy_regression_dataset("heteroscedastic", 30000, np.random.default_rng(2))
        x, y = ds.x[:, 0], ds.y[:, 0]
        standardized = (y - base_signal(x)) / hetero_envelope(x)
        assert abs(standardized.std() - 1.0) < 0.03
        # noise scale shrinks away from the kink
        near = np.abs(x - 0.03) < 0.2
        far = np.abs(x) > 1.5
        assert (y - base_signal(x))[near].std() > 3 * (y - base_signal(x))[far].std()

    def test_non_additive_differs_from_additive_with_same_draws(self):
        ds2 = noisy_regression_dataset("heteroscedastic", 500, np.random.default_rng(3))
        ds3 = noisy_regression_dataset("non_additive", 500, np.random.default_rng(3))
        np.testing.assert_array_equal(ds2.x, ds3.x)  # same underlying draws
        assert not np.allclose(ds2.y, ds3.y)

    def test_inputs_cover_domain(self):
        ds = noisy_regression_dataset("homoscedastic", 5000, np.random.default_rng(4))
        assert ds.x.min() >= -2.0 and ds.x.max() <= 2.0
        assert ds.x.min() < -1.9 and ds.x.max() > 1.9

    def test_rejects_bad_args(self):
        with pytest.raises(ConfigError):
            noisy_regression_dataset("homoscedastic", 0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            noisy_regression_dataset("bogus", 10, np.random.default_rng(0))


class TestRbfKernel:
    def test_diagonal_is_signal_variance(self):
        spec = GpSpec(0.5, 0.5)
        k = rbf_kernel(np.linspace(0, 1, 7), np.linspace(0, 1, 7), spec)
        np.testing.assert_allclose(np.diag(k), 0.5, rtol=1e-15)

    def test_hand_value(self):
        # k(0, 1) = 0.5 exp(-1 / (2 * 0.5)) = 0.5 / e
        k = rbf_kernel([0.0], [1.0], GpSpec(0.5, 0.5))
        np.testing.assert_allclose(k[0, 0], 0.5 * np.exp(-1.0), rtol=1e-15)

    def test_symmetry_and_psd(self):
        x = np.random.default_rng(0).uniform(-3, 3, 40)
        k = rbf_kernel(x, x, GpSpec(1.3, 0.7))
        np.testing.assert_allclose(k, k.T, rtol=1e-15)
        assert np.linalg.eigvalsh(k).min() > -1e-9

    def test_rejects_matrix_input(self):
        with pytest.raises(DimensionError):
            rbf_kernel(np.ones((2, 2)), np.ones(2), GpSpec(1.0, 1.0))


class TestSampleGp:
    def test_zero_covariance_returns_mean_exactly(self):
        mean = np.array([1.0, -2.0, 0.5])
        out = sample_gp(mean, np.zeros((3, 3)), 4, np.random.default_rng(0))
        np.testing.assert_array_equal(out, np.tile(mean, (4, 1)))

    def test_moments_recovered(self):
        xs = np.linspace(0, 1, 5)
        cov = rbf_kernel(xs, xs, GpSpec(0.8, 0.3))
        mean = np.sin(xs)
        draws = sample_gp(mean, cov, 40000, np.random.default_rng(1))
        emp_cov = np.cov(draws.T, bias=True)
        err = np.linalg.norm(emp_cov - cov) / np.linalg.norm(cov)
        assert err < 0.05
        assert np.abs(draws.mean(axis=0) - mean).max() < 0.03

    def test_not_psd_reports_smallest_eigenvalue(self):
        cov = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3 and -1
        with pytest.raises(NotPsdError) as err:
            sample_gp(np.zeros(2), cov, 1, np.random.default_rng(0))
        assert err.value.min_eigenvalue == pytest.approx(-1.0, rel=1e-9)

    def test_deterministic_in_generator(self):
        xs = np.linspace(0, 1, 4)
        cov = rbf_kernel(xs, xs, GpSpec(0.2, 0.5))
        a = sample_gp(np.zeros(4), cov, 3, np.random.default_rng(7))
        b = sample_gp(np.zeros(4), cov, 3, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)


class TestMultiFidelity:
    def test_mean_functions_frozen_values(self):
        np.testing.assert_allclose(mean_high(0.5), np.sin(2.0), rtol=1e-15)
        np.testing.assert_allclose(mean_low(0.5), 0.5 * np.sin(2.0) - 5.0, rtol=1e-15)
        np.testing.assert_allclose(mean_high(1.0), 16.0 * np.sin(8.0), rtol=1e-15)

    def test_joint_covariance_blocks(self):
        spec = MultiFidelitySpec()
        xs = np.array([0.3])
        _, cov = mf_joint_moments(spec, xs)
        # high-fidelity marginal variance rho^2 * 0.1 + 0.5
        np.testing.assert_allclose(cov[1, 1], 0.564, rtol=1e-12)
        # cross-covariance rho * 0.1
        np.testing.assert_allclose(cov[0, 1], 0.08, rtol=1e-12)
        np.testing.assert_allclose(cov[0, 0], 0.1, rtol=1e-12)

    def test_joint_mean_stacks_both_fidelities(self):
        spec = MultiFidelitySpec()
        xs = np.array([0.0, 0.5])
        mean, cov = mf_joint_moments(spec, xs)
        np.testing.assert_allclose(mean[:2], mean_low(xs), rtol=1e-14)
        np.testing.assert_allclose(mean[2:], mean_high(xs), rtol=1e-14)
        assert cov.shape == (4, 4)
        np.testing.assert_allclose(cov, cov.T, rtol=1e-14)

    def test_dataset_shapes_and_sensors(self):
        spec = MultiFidelitySpec()
        data = multifidelity_dataset(spec, np.random.default_rng(0))
        assert data.y_low.shape == (50, 4)
        assert data.y_high.shape == (50, 4)
        np.testing.assert_array_equal(data.x, [0.0, 0.4, 0.6, 1.0])

    def test_realization_statistics(self):
        spec = MultiFidelitySpec(n_realizations=40000)
        data = multifidelity_dataset(spec, np.random.default_rng(1))
        # marginal of the high output at each sensor is N(mean_high, 0.564)
        np.testing.assert_allclose(
            data.y_high.mean(axis=0), mean_high(data.x), atol=4 * np.sqrt(0.564 / 40000)
        )
        np.testing.assert_allclose(data.y_high.var(axis=0), 0.564, rtol=0.05)
        # empirical low/high correlation matches rho k_L / sqrt(k_L k_HH)
        c = np.cov(data.y_low[:, 0], data.y_high[:, 0], bias=True)
        np.testing.assert_allclose(c[0, 1], 0.08, atol=0.01)

    def test_paired_views(self):
        spec = MultiFidelitySpec(n_realizations=3)
        data = multifidelity_dataset(spec, np.random.default_rng(2))
        both = data.paired_rows()
        single = data.high_only_rows()
        assert both.x.shape == (12, 2)
        assert both.y.shape == (12, 1)
        assert single.x.shape == (12, 1)
        np.testing.assert_array_equal(both.y, single.y)
        # conditioning column 1 carries the matching low-fidelity values
        np.testing.assert_array_equal(both.x[:4, 1], data.y_low[0])
