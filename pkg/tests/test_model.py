import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset, make_state
from qpcr_fbi.model import (
    Dataset,
    InverseGamma,
    Priors,
    SamplerSettings,
    UniformOnSd,
    UniformOnVariance,
    VariancePrior,
    detection_logprobs,
    log_prior_beta,
    log_target_beta,
    log_target_theta,
    logistic_prob,
)

# 1 / (1 + exp(-4.3)) from a 40-digit mpmath evaluation
LOGISTIC_4_3 = 0.98661308217233522


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestLogistic:
    def test_zero_logit(self):
        assert logistic_prob((0.0, 0.0), 31.0) == 0.5
        assert logistic_prob((-35.7, 1.0), 35.7) == pytest.approx(0.5, abs=1e-15)

    def test_high_precision_value(self):
        assert logistic_prob((-35.7, 1.0), 40.0) == pytest.approx(LOGISTIC_4_3, rel=1e-14)

    def test_saturates_without_overflow(self):
        with np.errstate(all="raise"):
            p = logistic_prob((0.0, 1.0), np.array([-700.0, 700.0]))
        np.testing.assert_array_equal(p, [np.exp(-700.0) / (1 + np.exp(-700.0)), 1.0])

    @given(st.floats(-700, 700), st.floats(0.001, 5), st.floats(-50, 50), st.floats(0, 20))
    def test_monotone_in_mu(self, b0, b1, mu, step):
        assert logistic_prob((b0, b1), mu + step) >= logistic_prob((b0, b1), mu)

    @given(st.floats(-700, 700))
    def test_complement_sums_to_one(self, eta):
        p = float(logistic_prob((eta, 0.0), 1.0))
        assert p + (1.0 - p) == 1.0

    @given(st.floats(-600, 600))
    def test_log_probabilities_normalize(self, eta):
        pos, neg = detection_logprobs((eta, 0.0), 0.0, "eq2")
        assert np.logaddexp(pos, neg) == pytest.approx(0.0, abs=1e-12)

    def test_conventions_swap(self):
        obs_eq2, mis_eq2 = detection_logprobs((-35.7, 1.0), 31.0, "eq2")
        obs_inv, mis_inv = detection_logprobs((-35.7, 1.0), 31.0, "inverted")
        assert obs_eq2 == mis_inv and mis_eq2 == obs_inv
        assert math.exp(mis_inv) == pytest.approx(0.0090133, rel=1e-4)

    def test_unknown_convention(self):
        with pytest.raises(ValueError):
            detection_logprobs((0, 1), 1.0, "sideways")


class TestLogTargetBeta:
    def test_negative_slope_outside_support(self, small_data):
        state = make_state(small_data)
        assert log_target_beta(np.array([0.0, -0.5]), state, small_data, Priors()) == -np.inf

    def test_all_detected_reduces_to_prior_plus_log_p(self):
        data = make_dataset([[30.0, 31.0, 32.0]], partition=[0, 0, 1])
        state = make_state(data, theta=[[30.5, 32.0]])
        beta = np.array([-20.0, 0.7])
        expected = log_prior_beta(beta, Priors())
        for mu in (30.5, 30.5, 32.0):
            expected += math.log(_sigmoid(beta[0] + beta[1] * mu))
        got = log_target_beta(beta, state, data, Priors(), convention="eq2")
        assert got == pytest.approx(expected, rel=1e-12)

    def test_two_by_two_hand_sum(self):
        # gene 0 sample 1 missing (imputed below the bound), gene 1 sample 0 missing above it
        data = make_dataset([[30.0, np.nan], [np.nan, 35.0]], partition=[0, 1], delta=[0.0, 0.5])
        theta = np.array([[30.0, 33.0], [37.0, 34.0]])
        state = make_state(data, theta=theta, y_mis=[38.0, 41.0])
        beta = np.array([-30.0, 0.9])
        b0, b1 = beta
        mus = [[30.0, 33.5], [37.0, 34.5]]
        lp = (
            -0.5 * (b0**2 + b1**2) / 100.0 - math.log(2 * math.pi) - 0.5 * math.log(100.0 * 100.0)
        )
        # inverted: logistic is Pr(non-detect)
        terms = [
            math.log(1.0 - _sigmoid(b0 + b1 * mus[0][0])),
            math.log(_sigmoid(b0 + b1 * mus[0][1])),
            0.0,
            math.log(1.0 - _sigmoid(b0 + b1 * mus[1][1])),
        ]
        got = log_target_beta(beta, state, data, Priors(), convention="inverted")
        assert got == pytest.approx(lp + sum(terms), rel=1e-12)

    def test_shift_consistency(self, small_data):
        state = make_state(small_data, theta=[[30.0, 31.5], [28.2, 33.0]], y_mis=[30.5, 32.0])
        beta = np.array([-25.0, 0.8])
        c = 7.0
        shifted = make_dataset(small_data.y + c, partition=small_data.partition, detection_bound=47.0)
        s2 = make_state(shifted, theta=state.theta + c, y_mis=state.y_mis + c)
        flat = Priors(B=((1e12, 0.0), (0.0, 1e12)))
        a = log_target_beta(beta, state, small_data, flat) - log_prior_beta(beta, flat)
        b = log_target_beta(beta - np.array([beta[1] * c, 0.0]), s2, shifted, flat) - log_prior_beta(
            beta - np.array([beta[1] * c, 0.0]), flat
        )
        assert a == pytest.approx(b, rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-np.pi / 2 + 0.01, np.pi / 2 - 0.01))
    def test_prior_dominates_along_rays(self, angle):
        data = make_dataset([[30.0, np.nan, 31.0]], partition=[0, 0, 1])
        state = make_state(data, y_mis=[35.0])
        direction = np.array([np.sin(angle), np.cos(angle)])
        values = [log_target_beta(t * direction, state, data, Priors()) for t in (50.0, 100.0, 200.0, 400.0)]
        assert all(np.isfinite(values))
        assert np.all(np.diff(values) < 0)


class TestLogTargetTheta:
    def test_matches_dense_grid(self):
        data = make_dataset([[30.2, 31.0, 31.9, np.nan]], partition=[0, 0, 0, 0])
        state = make_state(data, theta=[[31.0]], sigma2=[0.6], gamma2=[50.0], beta=(-35.7, 1.0), y_mis=[33.0])
        grid = np.arange(0.0, 80.0, 0.001)
        vals = log_target_theta(0, 0, grid, state, data, Priors())
        # independent closed-form pieces, evaluated pointwise
        y = np.array([30.2, 31.0, 31.9, 33.0])
        ref = -0.5 * (grid - 60.0) ** 2 / 50.0 - 0.5 * ((y[None, :] - grid[:, None]) ** 2).sum(1) / 0.6
        eta = -35.7 + grid
        ref = ref + 3 * (-np.logaddexp(0, eta)) + (eta - np.logaddexp(0, eta))
        diff = vals - ref
        np.testing.assert_allclose(diff - diff[0], 0.0, atol=1e-8)
        m = np.argmax(vals)
        assert abs(grid[m] - grid[np.argmax(ref)]) <= 0.001
        h = 0.001
        curv = (vals[m + 1] - 2 * vals[m] + vals[m - 1]) / h**2
        curv_ref = (ref[m + 1] - 2 * ref[m] + ref[m - 1]) / h**2
        assert curv == pytest.approx(curv_ref, rel=1e-3)

    def test_equal_precision_midpoint(self):
        data = make_dataset([[34.0]], partition=[0])
        state = make_state(data, theta=[[30.0]], sigma2=[2.0], gamma2=[2.0], beta=(0.0, 0.0))
        grid = np.arange(30.0, 60.0, 0.001)
        best = grid[np.argmax(log_target_theta(0, 0, grid, state, data, Priors()))]
        assert best == pytest.approx((34.0 + 60.0) / 2, abs=1e-3)

    def test_flat_limit_gives_sample_mean(self):
        data = make_dataset([[30.0, 31.0, 33.5]], partition=[0, 0, 0], delta=[0.0, 0.5, -0.5])
        state = make_state(data, sigma2=[1.0], gamma2=[1e8], beta=(0.0, 0.0))
        grid = np.arange(25.0, 40.0, 0.0005)
        best = grid[np.argmax(log_target_theta(0, 0, grid, state, data, Priors()))]
        assert best == pytest.approx(np.mean([30.0, 30.5, 34.0]), abs=2e-3)

    def test_scalar_and_vector_agree(self, small_data):
        state = make_state(small_data, y_mis=[30.5, 32.0])
        vec = log_target_theta(1, 1, np.array([30.0, 32.0]), state, small_data, Priors())
        assert vec[1] == log_target_theta(1, 1, 32.0, state, small_data, Priors())

    def test_dimension_mismatch(self, small_data):
        state = make_state(small_data)
        state.theta = np.zeros((3, 2))
        with pytest.raises(ValueError):
            log_target_theta(0, 0, 30.0, state, small_data, Priors())


class TestDataset:
    def test_nondetects_carry_no_value(self):
        d = Dataset(y=[[30.0, 40.0]], z=[[1, 0]], partition=[0, 0])
        assert np.isnan(d.y[0, 1])
        assert d.n_missing == 1 and d.n_types == 1

    def test_type_matrix(self, small_data):
        np.testing.assert_array_equal(small_data.type_matrix(), [[1, 0], [1, 0], [0, 1], [0, 1]])

    def test_missing_index_row_major(self, small_data):
        rows, cols = small_data.missing_index
        np.testing.assert_array_equal(rows, [0, 1])
        np.testing.assert_array_equal(cols, [1, 2])

    @pytest.mark.parametrize(
        "kw",
        [
            dict(y=[[30.0, -1.0]], z=[[1, 1]], partition=[0, 0]),
            dict(y=[[30.0, np.inf]], z=[[1, 1]], partition=[0, 0]),
            dict(y=[[30.0, 31.0]], z=[[1, 2]], partition=[0, 0]),
            dict(y=[[30.0, 31.0]], z=[[1, 1]], partition=[0, 2]),
            dict(y=[[30.0, 31.0]], z=[[1, 1]], partition=[0]),
            dict(y=[[30.0, 31.0]], z=[[1, 1]], partition=[0, 0], delta=[0.0]),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            Dataset(**kw)


class TestPriorsAndSettings:
    def test_variance_conditionals(self):
        ss = 28.0
        assert UniformOnSd(10).conditional(6, ss) == (2.5, 14.0, 100.0)
        assert UniformOnVariance(10).conditional(6, ss) == (2.0, 14.0, 10.0)
        assert InverseGamma(1.0, 10.0).conditional(6, ss) == (4.0, 24.0, np.inf)

    def test_log_density_support(self):
        prior = UniformOnSd(10)
        assert prior.log_density(101.0) == -np.inf
        assert prior.log_density(4.0) == pytest.approx(-math.log(2.0))

    def test_invalid_priors(self):
        with pytest.raises(ValueError):
            VariancePrior("uniform_sd", A=0)
        with pytest.raises(ValueError):
            InverseGamma(0.0, 1.0)
        with pytest.raises(ValueError):
            Priors(B=((1.0, 2.0), (2.0, 1.0)))
        with pytest.raises(ValueError):
            Priors(B=((1.0, 0.5), (0.0, 1.0)))

    def test_settings(self):
        assert SamplerSettings().n_stored == 8000
        assert SamplerSettings(n_draws=105, burn_in=0, thin=10).n_stored == 11
        for bad in (dict(n_draws=10, burn_in=10), dict(thin=0), dict(beta_steps=(0.1, 0.0)), dict(convention="x")):
            with pytest.raises(ValueError):
                SamplerSettings(**bad)
