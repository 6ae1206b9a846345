"""Metropolis-within-Gibbs sampler with data augmentation of non-detects."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, log_ndtr

from .distributions import LOG_MIN_MASS, draw_inverse_gamma, draw_truncated_normal, log_normal_mass
from .model import (
    ChainState,
    Dataset,
    DegenerateStateError,
    Priors,
    SamplerSettings,
    cell_means,
    detection_logprobs,
    log_prior_beta,
    missingness_loglik,
)

logger = logging.getLogger(__name__)

INITIAL_BETA = (0.0, 0.1)
VARIANCE_FLOOR = 1e-3
# acceptance band targeted by the burn-in step-size adaptation
TARGET_ACCEPTANCE = (0.2, 0.5)


@dataclass
class ChainOutput:
    """Post burn-in draws of a single chain.

    Arrays are indexed by stored draw first: ``theta`` is ``(n, I, K)``,
    ``sigma2`` and ``gamma2`` are ``(n, I)``, ``beta`` is ``(n, 2)`` and
    ``y_mis`` is ``(n, M)`` in row-major order of the non-detect cells.
    """

    theta: np.ndarray
    sigma2: np.ndarray
    gamma2: np.ndarray
    beta: np.ndarray
    y_mis: np.ndarray
    acceptance: dict
    settings: SamplerSettings
    priors: Priors
    seed: Optional[int] = None
    beta_steps: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.theta.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ChainOutput):
            return NotImplemented
        arrays = ("theta", "sigma2", "gamma2", "beta", "y_mis")
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays) and (
            self.acceptance == other.acceptance
            and self.settings == other.settings
            and self.priors == other.priors
            and self.seed == other.seed
        )


def _bound(data: Dataset, settings_bound: Optional[float]) -> float:
    return data.detection_bound if settings_bound is None else settings_bound


# ---------------------------------------------------------------------------
# Full-conditional updates
# ---------------------------------------------------------------------------


def impute_missing_y(
    state: ChainState,
    data: Dataset,
    priors: Priors,
    rng: np.random.Generator,
    convention: str = "inverted",
    bound: Optional[float] = None,
) -> np.ndarray:
    """Draw every non-detect from its full conditional.

    The conditional is N(mu, sigma^2) on (0, inf) times Pr(non-detect | y),
    which equals the non-detect probability below the detection bound and 1
    above it, so it is a two-piece mixture of truncated normals.
    """
    bound = _bound(data, bound)
    rows, cols = data.missing_index
    if rows.size == 0:
        return np.empty(0)
    mu = state.theta[rows, data.partition[cols]] + data.delta[cols]
    sd = np.sqrt(state.sigma2[rows])
    _, log_mis = detection_logprobs(state.beta, mu, convention)
    log_low_mass = log_normal_mass(-mu / sd, (bound - mu) / sd)
    log_high = log_ndtr((mu - bound) / sd)
    # components too thin to draw from are dropped
    log_low = np.where(log_low_mass >= LOG_MIN_MASS, log_mis + log_low_mass, -np.inf)
    log_high = np.where(log_high >= LOG_MIN_MASS, log_high, -np.inf)
    dead = ~np.isfinite(log_low) & ~np.isfinite(log_high)
    if np.any(dead):
        c = np.flatnonzero(dead)[0]
        raise DegenerateStateError(
            f"non-detect at gene {data.gene_ids[rows[c]]}, sample {data.sample_ids[cols[c]]} "
            "has zero conditional mass"
        )
    with np.errstate(invalid="ignore"):
        p_low = np.where(
            np.isneginf(log_high), 1.0, np.where(np.isneginf(log_low), 0.0, expit(log_low - log_high))
        )
    low = rng.random(rows.size) < p_low
    lower = np.where(low, 0.0, bound)
    upper = np.where(low, bound, np.inf)
    return np.atleast_1d(draw_truncated_normal(mu, sd, lower, upper, rng))


def update_theta(
    state: ChainState,
    data: Dataset,
    priors: Priors,
    rng: np.random.Generator,
    convention: str = "inverted",
    bound: Optional[float] = None,
):
    """Independence Metropolis-Hastings step for every ``theta[i, k]``.

    The proposal is the conjugate normal part of the conditional, so the
    acceptance ratio reduces to the ratio of missingness likelihoods.
    Returns the new theta matrix and the number of accepted moves.
    """
    bound = _bound(data, bound)
    onehot = data.type_matrix()
    yc = data.completed(state.y_mis)
    n_k = onehot.sum(axis=0)
    prec = n_k[None, :] / state.sigma2[:, None] + 1.0 / state.gamma2[:, None]
    var = 1.0 / prec
    mean = var * (
        ((yc - data.delta) @ onehot) / state.sigma2[:, None]
        + priors.theta0 / state.gamma2[:, None]
    )
    proposal = mean + np.sqrt(var) * rng.standard_normal(mean.shape)

    active = np.zeros(yc.shape, dtype=bool)
    active[data.missing_index] = state.y_mis < bound
    cur = missingness_loglik(state.beta, cell_means(state.theta, data), data.z, active, convention)
    new = missingness_loglik(state.beta, cell_means(proposal, data), data.z, active, convention)
    log_ratio = (new - cur) @ onehot
    accept = np.log(rng.random(mean.shape)) < log_ratio
    return np.where(accept, proposal, state.theta), int(accept.sum())


def update_empty_cells(
    state: ChainState,
    data: Dataset,
    priors: Priors,
    rng: np.random.Generator,
    convention: str = "inverted",
    bound: Optional[float] = None,
):
    """Collapsed move for ``theta[i, k]`` cells whose replicates are all non-detects.

    The non-detects of the cell are integrated out, leaving the prior times a
    product of per-replicate non-detect masses. The proposal is the prior, so
    the acceptance ratio is the ratio of those products. The caller must
    redraw the non-detects afterwards. Returns the new theta matrix and the
    number of accepted moves.
    """
    bound = _bound(data, bound)
    onehot = data.type_matrix()
    empty = ((data.z == 1).astype(float) @ onehot) == 0
    if not empty.any():
        return state.theta, 0
    sd = np.sqrt(state.sigma2)[:, None]

    def log_mass(theta):
        mu = cell_means(theta, data)
        _, log_mis = detection_logprobs(state.beta, mu, convention)
        low = log_mis + log_normal_mass(-mu / sd, (bound - mu) / sd)
        per_sample = np.logaddexp(low, log_ndtr((mu - bound) / sd))
        return per_sample @ onehot

    proposal = priors.theta0 + np.sqrt(state.gamma2)[:, None] * rng.standard_normal(state.theta.shape)
    proposal = np.where(empty, proposal, state.theta)
    log_ratio = log_mass(proposal) - log_mass(state.theta)
    accept = empty & (np.log(rng.random(empty.shape)) < log_ratio)
    return np.where(accept, proposal, state.theta), int(accept.sum())


def _draw_variance(prior, n, ss, what):
    shape, rate, upper = prior.conditional(n, ss)
    rate = np.broadcast_to(rate, np.shape(ss))
    bad = rate <= 0
    if np.any(bad):
        raise DegenerateStateError(f"{what}: zero sum of squares for gene index {np.flatnonzero(bad)[0]}")
    if np.any(np.asarray(shape) <= 0) and not np.isfinite(upper):
        raise DegenerateStateError(f"{what}: improper conditional with {n} terms")
    return shape, rate, upper


def update_sigma2(
    state: ChainState,
    data: Dataset,
    priors: Priors,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-gene residual variance given all (observed and imputed) values."""
    yc = data.completed(state.y_mis)
    resid = yc - cell_means(state.theta, data)
    ss = np.sum(resid**2, axis=1)
    shape, rate, upper = _draw_variance(priors.sigma_prior, data.n_samples, ss, "sigma2")
    return np.atleast_1d(draw_inverse_gamma(shape, rate, rng, upper=upper))


def update_gamma2(state: ChainState, priors: Priors, rng: np.random.Generator) -> np.ndarray:
    """Per-gene spread of the sample-type means around ``theta0``."""
    ss = np.sum((state.theta - priors.theta0) ** 2, axis=1)
    n_types = state.theta.shape[1]
    shape, rate, upper = _draw_variance(priors.gamma_prior, n_types, ss, "gamma2")
    return np.atleast_1d(draw_inverse_gamma(shape, rate, rng, upper=upper))


def update_beta(
    state: ChainState,
    data: Dataset,
    priors: Priors,
    rng: np.random.Generator,
    steps=(0.5, 0.1),
    center: Optional[float] = None,
    convention: str = "inverted",
    bound: Optional[float] = None,
):
    """Two random-walk Metropolis moves on the missingness coefficients.

    Moves are made on the centred intercept ``beta0 + beta1 * center`` and on
    the slope with the centred intercept held fixed; both are symmetric in
    the original coordinates. Returns the new beta and a pair of accept flags.
    """
    bound = _bound(data, bound)
    mu = cell_means(state.theta, data)
    if center is None:
        center = float(mu.mean())
    active = np.zeros(mu.shape, dtype=bool)
    active[data.missing_index] = state.y_mis < bound

    def log_target(b):
        lp = log_prior_beta(b, priors)
        if not np.isfinite(lp):
            return lp
        return lp + float(missingness_loglik(b, mu, data.z, active, convention).sum())

    beta = state.beta.astype(float).copy()
    current = log_target(beta)
    flags = []
    for move in range(2):
        eps = steps[move] * rng.standard_normal()
        cand = beta.copy()
        if move == 0:
            cand[0] += eps
        else:
            cand[1] += eps
            cand[0] -= eps * center
        log_u = np.log(rng.random())
        if cand[1] <= 0 and priors.beta1_positive:
            flags.append(False)
            continue
        proposed = log_target(cand)
        ok = log_u < proposed - current
        if ok:
            beta, current = cand, proposed
        flags.append(bool(ok))
    return beta, tuple(flags)


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------


def initial_state(data: Dataset, priors: Priors, settings: SamplerSettings) -> ChainState:
    """Moment-based starting point; non-detects start at the detection bound."""
    onehot = data.type_matrix()
    obs = data.z == 1
    centred = np.where(obs, data.y - data.delta, 0.0)
    counts = obs.astype(float) @ onehot
    sums = centred @ onehot
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(counts > 0, sums / counts, priors.theta0)
    resid = np.where(obs, data.y - cell_means(theta, data), 0.0)
    dof = np.maximum(obs.sum(axis=1) - (counts > 0).sum(axis=1), 1)
    sigma2 = np.maximum(np.sum(resid**2, axis=1) / dof, VARIANCE_FLOOR)
    sigma2 = np.minimum(sigma2, priors.sigma_prior.upper)
    gamma2 = np.maximum(np.mean((theta - priors.theta0) ** 2, axis=1), VARIANCE_FLOOR)
    gamma2 = np.minimum(gamma2, priors.gamma_prior.upper)
    beta = np.array(settings.fix_beta if settings.fix_beta is not None else INITIAL_BETA, dtype=float)
    bound = _bound(data, settings.detection_bound)
    return ChainState(theta, sigma2, gamma2, beta, np.full(data.n_missing, bound))


def dispersed_state(
    data: Dataset, priors: Priors, settings: SamplerSettings, rng: np.random.Generator, scale: float = 2.0
) -> ChainState:
    """Perturbed starting point for additional chains."""
    state = initial_state(data, priors, settings)
    state.theta = state.theta + scale * rng.standard_normal(state.theta.shape)
    state.sigma2 = np.minimum(
        state.sigma2 * np.exp(rng.normal(0.0, 0.5, state.sigma2.shape)), priors.sigma_prior.upper
    )
    return state


def run_chain(
    data: Dataset,
    priors: Priors,
    settings: SamplerSettings,
    rng: Optional[np.random.Generator] = None,
    state: Optional[ChainState] = None,
) -> ChainOutput:
    """Run one chain and keep the thinned post burn-in draws."""
    if rng is None:
        rng = np.random.default_rng(settings.seed)
    state = initial_state(data, priors, settings) if state is None else state.copy()
    state.check(data)
    bound = _bound(data, settings.detection_bound)
    conv = settings.convention
    center = float(cell_means(state.theta, data).mean())
    steps = np.array(settings.beta_steps, dtype=float)

    n = settings.n_stored
    out_theta = np.empty((n, *state.theta.shape))
    out_sigma2 = np.empty((n, data.n_genes))
    out_gamma2 = np.empty((n, data.n_genes))
    out_beta = np.empty((n, 2))
    out_ymis = np.empty((n, data.n_missing))

    window_acc = np.zeros(2)
    window_len = 0
    burn_beta = np.empty((settings.burn_in, 2))
    beta_acc = np.zeros(2)
    theta_acc = 0
    n_post = 0
    stored = 0
    for t in range(settings.n_draws):
        try:
            state.theta, _ = update_empty_cells(state, data, priors, rng, conv, bound)
            state.y_mis = impute_missing_y(state, data, priors, rng, conv, bound)
            state.theta, n_acc = update_theta(state, data, priors, rng, conv, bound)
            state.sigma2 = update_sigma2(state, data, priors, rng)
            state.gamma2 = update_gamma2(state, priors, rng)
            if settings.fix_beta is None:
                state.beta, flags = update_beta(state, data, priors, rng, steps, center, conv, bound)
            else:
                flags = (True, True)
        except DegenerateStateError as exc:
            raise DegenerateStateError(f"sweep {t}: {exc}") from exc

        if t < settings.burn_in:
            burn_beta[t] = state.beta
            window_acc += flags
            window_len += 1
            if window_len == settings.adapt_window:
                rate = window_acc / window_len
                steps = np.where(rate < TARGET_ACCEPTANCE[0], steps * 0.6, steps)
                steps = np.where(rate > TARGET_ACCEPTANCE[1], steps * 1.6, steps)
                if settings.fix_beta is None:
                    center = _adapt_center(burn_beta[(t + 1) // 2 : t + 1], center, state, data)
                window_acc[:] = 0
                window_len = 0
            continue

        beta_acc += flags
        theta_acc += n_acc
        n_post += 1
        if (t - settings.burn_in) % settings.thin == 0:
            out_theta[stored] = state.theta
            out_sigma2[stored] = state.sigma2
            out_gamma2[stored] = state.gamma2
            out_beta[stored] = state.beta
            out_ymis[stored] = state.y_mis
            stored += 1

    acceptance = {
        "beta_intercept": float(beta_acc[0] / n_post),
        "beta_slope": float(beta_acc[1] / n_post),
        "beta": float(beta_acc.mean() / n_post),
        "theta": float(theta_acc / (n_post * state.theta.size)),
    }
    logger.debug("chain finished: acceptance %s", acceptance)
    return ChainOutput(
        out_theta, out_sigma2, out_gamma2, out_beta, out_ymis, acceptance,
        settings, priors, settings.seed, tuple(float(s) for s in steps),
    )


def _adapt_center(history: np.ndarray, center: float, state: ChainState, data: Dataset) -> float:
    """Point at which the intercept and slope decorrelate, from recent burn-in draws."""
    cov = np.cov(history, rowvar=False)
    if history.shape[0] < 3 or not cov[1, 1] > 0:
        return center
    mu = cell_means(state.theta, data)
    return float(np.clip(-cov[0, 1] / cov[1, 1], mu.min(), mu.max()))


def _run_one(args):
    data, priors, settings, seed_seq, dispersed = args
    rng = np.random.default_rng(seed_seq)
    state = dispersed_state(data, priors, settings, rng) if dispersed else None
    return run_chain(data, priors, settings, rng, state)


def run_chains(
    data: Dataset,
    priors: Priors,
    settings: SamplerSettings,
    n_chains: int = 2,
    workers: int = 1,
) -> list:
    """Independent chains; every chain after the first starts from a dispersed state."""
    children = np.random.SeedSequence(settings.seed).spawn(n_chains)
    jobs = [(data, priors, settings, child, c > 0) for c, child in enumerate(children)]
    if workers > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]
