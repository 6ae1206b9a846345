from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import make_dataset
from qpcr_fbi.diagnostics import effective_sample_size
from qpcr_fbi.estimators import (
    EstimateTable,
    PriorSpec,
    fbi_estimates,
    score_against_truth,
    sensitivity_sweep,
    si_bayes_estimates,
    table1_grid,
    trunc_estimates,
)
from qpcr_fbi.model import Priors, SamplerSettings
from qpcr_fbi.sampler import ChainOutput, run_chain
from qpcr_fbi.simulate import SimConfig, simulate_dataset


def fake_chain(theta, sigma2, y_mis=None) -> ChainOutput:
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    y_mis = np.empty((n, 0)) if y_mis is None else np.asarray(y_mis, dtype=float)
    return ChainOutput(
        theta=theta, sigma2=np.asarray(sigma2, dtype=float), gamma2=np.ones_like(sigma2, dtype=float),
        beta=np.tile([0.0, 0.1], (n, 1)), y_mis=y_mis, acceptance={}, settings=SamplerSettings(), priors=Priors(),
    )


def truth(theta, sigma2):
    return SimpleNamespace(theta=np.asarray(theta, dtype=float), sigma2=np.asarray(sigma2, dtype=float))


class TestEstimates:
    def test_identical_states(self):
        chain = fake_chain(np.tile([[[30.0, 31.0]]], (5, 1, 1)), np.full((5, 1), 0.4))
        est = fbi_estimates(chain)
        np.testing.assert_array_equal(est.theta_hat, [[30.0, 31.0]])
        np.testing.assert_array_equal(est.sigma2_hat, [0.4])

    def test_odd_median(self):
        chain = fake_chain(np.arange(1.0, 6.0).reshape(5, 1, 1), np.ones((5, 1)))
        assert fbi_estimates(chain).theta_hat[0, 0] == 3.0

    def test_chains_are_pooled(self):
        a = fake_chain(np.full((3, 1, 1), 1.0), np.ones((3, 1)))
        b = fake_chain(np.full((2, 1, 1), 5.0), np.ones((2, 1)))
        assert fbi_estimates([a, b]).theta_hat[0, 0] == 1.0

    def test_empty_chain(self):
        with pytest.raises(ValueError):
            fbi_estimates(fake_chain(np.empty((0, 1, 1)), np.empty((0, 1))))

    def test_si_bayes_uses_median_of_imputations(self):
        data = make_dataset([[38.0, np.nan, 30.0, 31.0]], partition=[0, 0, 1, 1])
        draws = np.array([40.2, 41.0, 40.6, 40.4, 40.8])[:, None]
        chain = fake_chain(np.zeros((5, 1, 2)), np.ones((5, 1)), y_mis=draws)
        est = si_bayes_estimates(chain, data)
        assert est.theta_hat[0, 0] == pytest.approx((38.0 + 40.6) / 2)
        # pooled within-type variance, divisor J - K
        resid = [38.0 - 39.3, 40.6 - 39.3, -0.5, 0.5]
        assert est.sigma2_hat[0] == pytest.approx(np.sum(np.square(resid)) / 2)

    def test_si_bayes_equals_plugin_without_missing(self):
        data = make_dataset([[30.0, 30.5, 32.0, 31.0, 33.0]], partition=[0, 0, 1, 1, 1])
        chain = fake_chain(np.zeros((3, 1, 2)), np.ones((3, 1)))
        si, tr = si_bayes_estimates(chain, data), trunc_estimates(data)
        np.testing.assert_array_equal(si.theta_hat, tr.theta_hat)
        np.testing.assert_array_equal(si.sigma2_hat, tr.sigma2_hat)
        np.testing.assert_allclose(tr.theta_hat, [[30.25, 32.0]])
        assert tr.sigma2_hat[0] == pytest.approx((0.125 + 2.0) / 3)

    def test_trunc_marks_empty_cells(self):
        data = make_dataset([[np.nan, np.nan, 30.0, 31.0]], partition=[0, 0, 1, 1])
        est = trunc_estimates(data)
        assert np.isnan(est.theta_hat[0, 0]) and est.theta_hat[0, 1] == 30.5

    def test_table_validation(self):
        with pytest.raises(ValueError):
            EstimateTable("MI", np.zeros((1, 1)), np.zeros(1))
        with pytest.raises(ValueError):
            EstimateTable("FBI", np.zeros((1, 1)), -np.ones(1))

    def test_fbi_matches_complete_data_posterior(self):
        # no missing cells and a flat missingness model: conjugate reference values
        rng = np.random.default_rng(8)
        J, K = 180, 6
        partition = np.repeat(np.arange(K), J // K)
        y = 31.0 + np.linspace(-2, 2, K)[partition] + np.sqrt(0.05) * rng.standard_normal(J)
        data = make_dataset(y[None, :], partition=partition)
        settings = SamplerSettings(n_draws=6000, burn_in=1000, seed=4, fix_beta=(0.0, 0.0))
        chain = run_chain(data, Priors(), settings)
        est, plug = fbi_estimates(chain), trunc_estimates(data)
        # one test on the cell-averaged difference keeps the 2 MCSE level honest
        mcse = [1.2533 * d.std() / np.sqrt(effective_sample_size(d)) for d in chain.theta[:, 0, :].T]
        diff = np.mean(est.theta_hat[0] - plug.theta_hat[0])
        assert abs(diff) < 2 * np.sqrt(np.sum(np.square(mcse))) / K
        S = plug.sigma2_hat[0] * (J - K)
        draws = chain.sigma2[:, 0]
        mcse = 1.2533 * draws.std() / np.sqrt(effective_sample_size(draws))
        reference = stats.invgamma((J - K - 1) / 2, scale=S / 2).median()
        assert abs(est.sigma2_hat[0] - reference) < 2 * mcse
        si = si_bayes_estimates(chain, data)
        np.testing.assert_array_equal(si.theta_hat, plug.theta_hat)


class TestScoring:
    def test_exact_estimates_score_zero(self):
        t = truth([[30.0, 31.0]], [0.5])
        s = score_against_truth([EstimateTable("FBI", t.theta, t.sigma2)] * 3, [t] * 3)
        for fam in ("theta", "sigma2"):
            for metric in ("bias", "mse"):
                assert s.values[fam][metric] == (0.0, 0.0, 0.0)

    @pytest.mark.parametrize("pooling", ["cell", "pooled"])
    def test_two_sims_hand_values(self, pooling):
        t = truth([[2.0]], [1.0])
        tables = [EstimateTable("FBI", [[1.0]], [1.0]), EstimateTable("FBI", [[3.0]], [1.0])]
        s = score_against_truth(tables, [t, t], pooling=pooling)
        assert s.get("theta", "bias") == 0.0
        assert s.get("theta", "mse") == 1.0

    def test_linear_quantiles(self):
        t = truth([[0.0, 0.0, 0.0, 0.0]], [1.0])
        s = score_against_truth([EstimateTable("Trunc", [[1.0, 2.0, 3.0, 4.0]], [1.0])], [t])
        assert s.values["theta"]["bias"] == (1.75, 2.5, 3.25)

    def test_nan_estimates_skipped(self):
        t = truth([[1.0, 1.0]], [1.0])
        s = score_against_truth([EstimateTable("Trunc", [[np.nan, 2.0]], [1.0])], [t])
        assert s.values["theta"]["bias"] == (1.0, 1.0, 1.0)

    def test_misaligned(self):
        t = truth([[1.0]], [1.0])
        with pytest.raises(ValueError):
            score_against_truth([EstimateTable("FBI", [[1.0, 2.0]], [1.0])], [t])
        with pytest.raises(ValueError):
            score_against_truth([], [])
        with pytest.raises(ValueError):
            score_against_truth([EstimateTable("FBI", [[1.0]], [1.0])], [t], pooling="median")

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.permutations(range(3)), st.sampled_from(["cell", "pooled"]))
    def test_permutation_invariant(self, values, order, pooling):
        tables = [EstimateTable("FBI", [[values[2 * i], values[2 * i + 1]]], [abs(values[i]) + 0.1]) for i in range(3)]
        truths = [truth([[0.0, 0.5]], [0.3])] * 3
        a = score_against_truth(tables, truths, pooling)
        b = score_against_truth([tables[i] for i in order], truths, pooling)
        assert a.values == b.values


class TestSweep:
    def test_table1_grid(self):
        grid = table1_grid()
        assert len(grid) == 8 and len({g.label for g in grid}) == 8
        assert grid[0].priors == Priors()

    def test_single_entry_grid(self):
        settings = SamplerSettings(n_draws=150, burn_in=50, seed=2)
        config = SimConfig(n_genes=3, n_types=2, reps_per_type=3)
        rows = sensitivity_sweep(config, [PriorSpec("default", Priors())], settings, n_sims=2)
        assert len(rows) == 1 and rows[0].label == "default"
        assert set(rows[0].summaries) == {"FBI", "SI-Bayes", "Trunc"}
        assert rows[0].summaries["FBI"].n_sims == 2

    def test_priors_share_datasets(self):
        settings = SamplerSettings(n_draws=150, burn_in=50, seed=2)
        config = SimConfig(n_genes=3, n_types=2, reps_per_type=3)
        grid = table1_grid()[:2]
        rows = sensitivity_sweep(config, grid, settings, n_sims=2)
        for a, b in zip(rows[0].tables["Trunc"], rows[1].tables["Trunc"]):
            assert a == b
        assert sensitivity_sweep(config, grid, settings, n_sims=2)[1].summaries["FBI"].values == rows[1].summaries["FBI"].values

    def test_dataset_source(self):
        data, t = simulate_dataset(SimConfig(n_genes=3, n_types=2, reps_per_type=3), np.random.default_rng(1))
        settings = SamplerSettings(n_draws=150, burn_in=50, seed=2)
        rows = sensitivity_sweep(data, table1_grid()[:1], settings, reference=t)
        assert rows[0].summaries["FBI"].n_sims == 1
        assert sensitivity_sweep(data, table1_grid()[:1], settings)[0].summaries == {}

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            sensitivity_sweep(SimConfig(), [], SamplerSettings())
