"""Point estimators from chain output, scoring against truth, and the prior sweep."""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .model import Dataset, InverseGamma, Priors, SamplerSettings, UniformOnSd
from .sampler import ChainOutput, run_chain
from .simulate import SimConfig, simulate_dataset

METHODS = ("FBI", "SI-Bayes", "Trunc")
QUANTILES = (0.25, 0.5, 0.75)
QUANTILE_METHOD = "linear"


@dataclass
class EstimateTable:
    method: str
    theta_hat: np.ndarray
    sigma2_hat: np.ndarray

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        self.theta_hat = np.asarray(self.theta_hat, dtype=float)
        self.sigma2_hat = np.asarray(self.sigma2_hat, dtype=float)
        if self.theta_hat.ndim != 2 or self.sigma2_hat.shape != (self.theta_hat.shape[0],):
            raise ValueError("theta_hat must be (I, K) and sigma2_hat (I,)")
        if np.any(self.sigma2_hat < 0):
            raise ValueError("variance estimates must be non-negative")

    def __eq__(self, other):
        if not isinstance(other, EstimateTable):
            return NotImplemented
        return (
            self.method == other.method
            and np.array_equal(self.theta_hat, other.theta_hat, equal_nan=True)
            and np.array_equal(self.sigma2_hat, other.sigma2_hat, equal_nan=True)
        )


def _draws(chain, name):
    chains = chain if isinstance(chain, (list, tuple)) else [chain]
    if not chains or any(c.n_draws == 0 for c in chains):
        raise ValueError("empty chain")
    return np.concatenate([getattr(c, name) for c in chains], axis=0)


def fbi_estimates(chain: Union[ChainOutput, Sequence[ChainOutput]]) -> EstimateTable:
    """Posterior medians of theta and sigma2 (draws of several chains are pooled)."""
    return EstimateTable("FBI", np.median(_draws(chain, "theta"), axis=0), np.median(_draws(chain, "sigma2"), axis=0))


def _plugin(y: np.ndarray, data: Dataset, method: str) -> EstimateTable:
    """Replicate means and pooled within-type variances of a (possibly gappy) matrix."""
    onehot = data.type_matrix()
    have = np.isfinite(y)
    centred = np.where(have, y - data.delta, 0.0)
    counts = have.astype(float) @ onehot
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(counts > 0, (centred @ onehot) / counts, np.nan)
    resid = np.where(have, y - theta[:, data.partition] - data.delta, 0.0)
    dof = have.sum(axis=1) - (counts > 0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sigma2 = np.where(dof > 0, np.sum(resid**2, axis=1) / dof, np.nan)
    return EstimateTable(method, theta, sigma2)


def si_bayes_estimates(chain: Union[ChainOutput, Sequence[ChainOutput]], data: Dataset) -> EstimateTable:
    """Plug-in estimates after filling each non-detect with its posterior median."""
    y_mis = _draws(chain, "y_mis")
    filled = data.completed(np.median(y_mis, axis=0) if y_mis.shape[1] else np.empty(0))
    return _plugin(filled, data, "SI-Bayes")


def trunc_estimates(data: Dataset) -> EstimateTable:
    """Observed-only estimates; all-missing cells are NaN."""
    return _plugin(data.y, data, "Trunc")


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


@dataclass
class ScoreSummary:
    """Quartiles of bias and MSE for theta and sigma2.

    ``values[family][metric]`` is a ``(q25, q50, q75)`` tuple.
    """

    values: dict
    method: str = "FBI"
    n_sims: int = 0
    pooling: str = "cell"
    label: str = ""

    def get(self, family: str, metric: str, q: float = 0.5) -> float:
        return self.values[family][metric][QUANTILES.index(q)]


def _errors(estimates, truth):
    return np.asarray(estimates, dtype=float) - np.asarray(truth, dtype=float)


def _summarize(err: np.ndarray, pooling: str) -> dict:
    """``err`` is (n_sims, n_cells)."""
    if pooling == "cell":
        # sorting over replicates makes the sums independent of replicate order
        err = np.sort(err, axis=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            bias = np.nanmean(err, axis=0)
            mse = np.nanmean(err**2, axis=0)
        bias, mse = bias[np.isfinite(bias)], mse[np.isfinite(mse)]
    elif pooling == "pooled":
        flat = err[np.isfinite(err)]
        bias, mse = flat, flat**2
    else:
        raise ValueError("pooling must be 'cell' or 'pooled'")
    if bias.size == 0:
        nan = (np.nan,) * len(QUANTILES)
        return {"bias": nan, "mse": nan}
    q = lambda v: tuple(float(x) for x in np.quantile(v, QUANTILES, method=QUANTILE_METHOD))
    return {"bias": q(bias), "mse": q(mse)}


def score_against_truth(tables: Sequence[EstimateTable], truths: Sequence, pooling: str = "cell") -> ScoreSummary:
    """Bias and MSE quartiles over genes, sample-types and replicates.

    With ``pooling="cell"`` bias and MSE are averaged over replicates for each
    parameter cell before taking quartiles over cells; ``"pooled"`` takes
    quartiles over every (cell, replicate) error. Truth objects need
    ``theta`` and ``sigma2`` attributes. Missing (NaN) estimates are skipped.
    """
    if len(tables) != len(truths) or not tables:
        raise ValueError("need equally many estimate tables and truths")
    theta_err, sigma_err = [], []
    for table, truth in zip(tables, truths):
        if table.theta_hat.shape != np.shape(truth.theta) or table.sigma2_hat.shape != np.shape(truth.sigma2):
            raise ValueError("estimate and truth dimensions differ")
        theta_err.append(_errors(table.theta_hat, truth.theta).ravel())
        sigma_err.append(_errors(table.sigma2_hat, truth.sigma2).ravel())
    methods = {t.method for t in tables}
    return ScoreSummary(
        values={
            "theta": _summarize(np.array(theta_err), pooling),
            "sigma2": _summarize(np.array(sigma_err), pooling),
        },
        method=methods.pop() if len(methods) == 1 else "mixed",
        n_sims=len(tables),
        pooling=pooling,
    )


# ---------------------------------------------------------------------------
# Prior sensitivity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorSpec:
    label: str
    priors: Priors


def table1_grid(theta0: float = 60.0) -> list:
    """The eight variance-prior configurations compared in the sensitivity study.

    Uniform rows put the uniform prior on the standard deviation.
    """
    rows = [
        ("sigma2 Unif(0,100), gamma2 Unif(0,100)", UniformOnSd(100.0), UniformOnSd(100.0)),
        ("sigma2 Unif(0,10), gamma2 Unif(0,10)", UniformOnSd(10.0), UniformOnSd(10.0)),
        ("sigma2 IG(0.001,0.5), gamma2 IG(0.1,0.1)", InverseGamma(0.001, 0.5), InverseGamma(0.1, 0.1)),
        ("sigma2 IG(0.001,0.5), gamma2 IG(0.001,0.5)", InverseGamma(0.001, 0.5), InverseGamma(0.001, 0.5)),
        ("sigma2 IG(0.001,0.5), gamma2 IG(1,10)", InverseGamma(0.001, 0.5), InverseGamma(1.0, 10.0)),
        ("sigma2 IG(0.001,0.5), gamma2 IG(0.001,0.001)", InverseGamma(0.001, 0.5), InverseGamma(0.001, 0.001)),
        ("sigma2 IG(1,10), gamma2 IG(0.001,0.001)", InverseGamma(1.0, 10.0), InverseGamma(0.001, 0.001)),
        ("sigma2 IG(0.001,0.001), gamma2 IG(0.001,0.001)", InverseGamma(0.001, 0.001), InverseGamma(0.001, 0.001)),
    ]
    return [PriorSpec(label, Priors(theta0=theta0, sigma_prior=s, gamma_prior=g)) for label, s, g in rows]


@dataclass
class SweepRow:
    label: str
    priors: Priors
    summaries: dict  # method -> ScoreSummary
    tables: dict = field(default_factory=dict)  # method -> list of EstimateTable


def _sim_seeds(seed, n_sims):
    return [tuple(child.spawn(2)) for child in np.random.SeedSequence(seed).spawn(n_sims)]


def _fit_one(args):
    sim_config, priors, settings, data_seed, chain_seed = args
    data, truth = simulate_dataset(sim_config, np.random.default_rng(data_seed))
    chain = run_chain(data, priors, settings, np.random.default_rng(chain_seed))
    return (
        {"FBI": fbi_estimates(chain), "SI-Bayes": si_bayes_estimates(chain, data), "Trunc": trunc_estimates(data)},
        truth,
    )


def sensitivity_sweep(
    source: Union[SimConfig, Dataset],
    prior_grid: Sequence[PriorSpec],
    settings: SamplerSettings,
    n_sims: int = 100,
    workers: int = 1,
    pooling: str = "cell",
    reference=None,
    seed: Optional[int] = None,
) -> list:
    """Fit every prior configuration and collect score summaries.

    With a ``SimConfig`` the same ``n_sims`` simulated datasets (and chain
    seeds) are reused for every prior. With a ``Dataset`` each prior is fit
    once and scored against ``reference`` (an object with ``theta`` and
    ``sigma2``); without a reference the summaries are empty.
    """
    if not prior_grid:
        raise ValueError("prior grid is empty")
    seed = settings.seed if seed is None else seed
    rows = []
    if isinstance(source, Dataset):
        for spec in prior_grid:
            chain = run_chain(source, spec.priors, settings, np.random.default_rng(seed))
            tables = {
                "FBI": fbi_estimates(chain),
                "SI-Bayes": si_bayes_estimates(chain, source),
                "Trunc": trunc_estimates(source),
            }
            summaries = {}
            if reference is not None:
                summaries = {m: score_against_truth([t], [reference], pooling) for m, t in tables.items()}
            rows.append(SweepRow(spec.label, spec.priors, summaries, {m: [t] for m, t in tables.items()}))
        return rows

    seeds = _sim_seeds(seed, n_sims)
    jobs = [(source, spec.priors, settings, ds, cs) for spec in prior_grid for ds, cs in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_fit_one(job) for job in jobs]

    for p, spec in enumerate(prior_grid):
        chunk = results[p * n_sims:(p + 1) * n_sims]
        truths = [truth for _, truth in chunk]
        tables = {m: [tabs[m] for tabs, _ in chunk] for m in METHODS}
        summaries = {}
        for m in METHODS:
            summaries[m] = score_against_truth(tables[m], truths, pooling)
            summaries[m].label = spec.label
        rows.append(SweepRow(spec.label, spec.priors, summaries, tables))
    return rows
