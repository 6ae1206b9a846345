"""Domain types and log densities for the hierarchical non-detect model.

Genes are indexed by ``i``, samples by ``j`` and sample-types by ``k``.
The expected expression of a cell is ``mu_ij = theta[i, k(j)] + delta[j]``
and the detection probability is logistic in ``mu_ij``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit

CONVENTIONS = ("eq2", "inverted")
DEFAULT_DETECTION_BOUND = 40.0


class DegenerateStateError(RuntimeError):
    """Raised when a full conditional is undefined for the current state."""


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Dataset:
    """Gene x sample matrix of delta-Ct values with a non-detect mask.

    ``y`` holds NaN for every non-detect; ``z`` is 1 for detected cells and
    0 for non-detects. ``partition[j]`` is the 0-based sample-type of sample
    ``j``.
    """

    y: np.ndarray
    z: np.ndarray
    partition: np.ndarray
    delta: Optional[np.ndarray] = None
    gene_ids: Optional[list] = None
    sample_ids: Optional[list] = None
    type_labels: Optional[list] = None
    detection_bound: float = DEFAULT_DETECTION_BOUND

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int8)
        self.y = np.array(self.y, dtype=float)
        self.partition = np.asarray(self.partition, dtype=np.intp)
        if self.y.ndim != 2 or self.y.shape != self.z.shape:
            raise ValueError(f"y {self.y.shape} and z {self.z.shape} must be equal 2-d shapes")
        n_genes, n_samples = self.y.shape
        if self.partition.shape != (n_samples,):
            raise ValueError("partition must assign one sample-type per sample")
        if not np.isin(self.z, (0, 1)).all():
            raise ValueError("z must be 0/1")
        if self.partition.min(initial=0) < 0:
            raise ValueError("sample-type indices must be non-negative")
        n_types = int(self.partition.max()) + 1 if n_samples else 0
        if np.bincount(self.partition, minlength=n_types).min(initial=1) == 0:
            raise ValueError("every sample-type must contain at least one sample")
        # non-detects never carry a value
        self.y[self.z == 0] = np.nan
        obs = self.y[self.z == 1]
        if not np.all(np.isfinite(obs)) or np.any(obs <= 0):
            raise ValueError("observed values must be finite and > 0")
        if self.delta is None:
            self.delta = np.zeros(n_samples)
        self.delta = np.asarray(self.delta, dtype=float)
        if self.delta.shape != (n_samples,):
            raise ValueError("delta must have one entry per sample")
        if self.gene_ids is None:
            self.gene_ids = [f"gene_{i + 1}" for i in range(n_genes)]
        if self.sample_ids is None:
            self.sample_ids = [f"sample_{j + 1}" for j in range(n_samples)]
        if self.type_labels is None:
            self.type_labels = [f"type_{k + 1}" for k in range(n_types)]
        if len(self.gene_ids) != n_genes or len(self.sample_ids) != n_samples:
            raise ValueError("id lists do not match matrix dimensions")
        if len(self.type_labels) != n_types:
            raise ValueError("one label per sample-type required")
        self.gene_ids = [str(g) for g in self.gene_ids]
        self.sample_ids = [str(s) for s in self.sample_ids]
        self.type_labels = [str(t) for t in self.type_labels]

    @property
    def n_genes(self) -> int:
        return self.y.shape[0]

    @property
    def n_samples(self) -> int:
        return self.y.shape[1]

    @property
    def n_types(self) -> int:
        return len(self.type_labels)

    @property
    def missing_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-major (gene, sample) indices of non-detect cells."""
        return np.nonzero(self.z == 0)

    @property
    def n_missing(self) -> int:
        return int((self.z == 0).sum())

    def type_matrix(self) -> np.ndarray:
        """One-hot ``(J, K)`` matrix mapping samples to sample-types."""
        onehot = np.zeros((self.n_samples, self.n_types))
        onehot[np.arange(self.n_samples), self.partition] = 1.0
        return onehot

    def completed(self, y_mis: np.ndarray) -> np.ndarray:
        """Return ``y`` with non-detects filled from ``y_mis``."""
        out = self.y.copy()
        out[self.missing_index] = y_mis
        return out

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.y, other.y, equal_nan=True)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.partition, other.partition)
            and np.array_equal(self.delta, other.delta)
            and self.gene_ids == other.gene_ids
            and self.sample_ids == other.sample_ids
            and self.type_labels == other.type_labels
            and self.detection_bound == other.detection_bound
        )


# ---------------------------------------------------------------------------
# Priors and settings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariancePrior:
    """Prior on a variance parameter.

    ``kind`` is ``"uniform_sd"`` (sd ~ Unif(0, A)), ``"uniform_var"``
    (variance ~ Unif(0, A)) or ``"inv_gamma"`` (variance ~ IG(shape, scale)).
    """

    kind: str
    A: float = 100.0
    shape: float = 0.001
    scale: float = 0.001

    def __post_init__(self):
        if self.kind not in ("uniform_sd", "uniform_var", "inv_gamma"):
            raise ValueError(f"unknown variance prior kind {self.kind!r}")
        if self.kind == "inv_gamma":
            if self.shape <= 0 or self.scale <= 0:
                raise ValueError("inverse-gamma hyperparameters must be > 0")
        elif self.A <= 0:
            raise ValueError("uniform bound A must be > 0")

    @property
    def upper(self) -> float:
        """Upper support bound on the variance."""
        if self.kind == "uniform_sd":
            return self.A**2
        if self.kind == "uniform_var":
            return self.A
        return np.inf

    def conditional(self, n: int, ss) -> tuple:
        """Inverse-gamma ``(shape, rate, upper)`` of the variance full conditional.

        ``n`` normal terms with sum of squares ``ss`` enter the likelihood as
        ``v**(-n/2) * exp(-ss / (2 v))``.
        """
        ss = np.asarray(ss, dtype=float)
        if self.kind == "uniform_sd":
            return (n - 1) / 2.0, ss / 2.0, self.upper
        if self.kind == "uniform_var":
            return n / 2.0 - 1.0, ss / 2.0, self.upper
        return self.shape + n / 2.0, self.scale + ss / 2.0, np.inf

    def log_density(self, v) -> np.ndarray:
        """Unnormalized log prior density of the variance."""
        v = np.asarray(v, dtype=float)
        inside = (v > 0) & (v <= self.upper)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "uniform_sd":
                out = -0.5 * np.log(v)
            elif self.kind == "uniform_var":
                out = np.zeros_like(v)
            else:
                out = -(self.shape + 1.0) * np.log(v) - self.scale / v
        return np.where(inside, out, -np.inf)

    @property
    def label(self) -> str:
        if self.kind == "uniform_sd":
            return f"sd~Unif(0, {self.A:g})"
        if self.kind == "uniform_var":
            return f"var~Unif(0, {self.A:g})"
        return f"IG({self.shape:g}, {self.scale:g})"


def UniformOnSd(A: float) -> VariancePrior:
    return VariancePrior("uniform_sd", A=A)


def UniformOnVariance(A: float) -> VariancePrior:
    return VariancePrior("uniform_var", A=A)


def InverseGamma(shape: float, scale: float) -> VariancePrior:
    return VariancePrior("inv_gamma", shape=shape, scale=scale)


@dataclass(frozen=True)
class Priors:
    theta0: float = 60.0
    sigma_prior: VariancePrior = field(default_factory=lambda: UniformOnSd(100.0))
    gamma_prior: VariancePrior = field(default_factory=lambda: UniformOnSd(100.0))
    mu_beta: tuple = (0.0, 0.0)
    B: tuple = ((100.0, 0.0), (0.0, 100.0))
    beta1_positive: bool = True

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.shape != (2, 2) or not np.allclose(B, B.T):
            raise ValueError("B must be a symmetric 2x2 matrix")
        if np.any(np.linalg.eigvalsh(B) <= 0):
            raise ValueError("B must be positive definite")
        if len(self.mu_beta) != 2:
            raise ValueError("mu_beta must have two entries")

    @property
    def label(self) -> str:
        return f"sigma2 {self.sigma_prior.label}, gamma2 {self.gamma_prior.label}"


@dataclass(frozen=True)
class SamplerSettings:
    """Chain length, tuning and missingness conventions.

    ``n_draws`` counts every sweep including burn-in. ``beta_steps`` are the
    random-walk scales for the centred intercept and for the slope.
    ``detection_bound=None`` defers to the dataset's bound.
    """

    n_draws: int = 10000
    burn_in: int = 2000
    thin: int = 1
    seed: Optional[int] = None
    beta_steps: tuple = (0.5, 0.1)
    adapt_window: int = 100
    detection_bound: Optional[float] = None
    convention: str = "inverted"
    fix_beta: Optional[tuple] = None

    def __post_init__(self):
        if not (self.n_draws > self.burn_in >= 0):
            raise ValueError("need n_draws > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if len(self.beta_steps) != 2 or min(self.beta_steps) <= 0:
            raise ValueError("beta_steps must be two positive numbers")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be >= 1")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")
        if self.detection_bound is not None and self.detection_bound <= 0:
            raise ValueError("detection bound must be > 0")

    @property
    def n_stored(self) -> int:
        return -(-(self.n_draws - self.burn_in) // self.thin)


@dataclass
class ChainState:
    theta: np.ndarray
    sigma2: np.ndarray
    gamma2: np.ndarray
    beta: np.ndarray
    y_mis: np.ndarray

    def copy(self) -> "ChainState":
        return ChainState(
            self.theta.copy(), self.sigma2.copy(), self.gamma2.copy(),
            self.beta.copy(), self.y_mis.copy(),
        )

    def check(self, data: Dataset) -> None:
        if self.theta.shape != (data.n_genes, data.n_types):
            raise ValueError(f"theta shape {self.theta.shape} does not match data")
        if self.sigma2.shape != (data.n_genes,) or self.gamma2.shape != (data.n_genes,):
            raise ValueError("variance vectors must have one entry per gene")
        if self.beta.shape != (2,):
            raise ValueError("beta must be a pair")
        if self.y_mis.shape != (data.n_missing,):
            raise ValueError("y_mis must have one entry per non-detect")


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


def logistic_prob(beta: Sequence[float], mu) -> np.ndarray:
    """``1 / (1 + exp(-(beta0 + beta1 * mu)))``, saturating at extreme logits."""
    return expit(beta[0] + beta[1] * np.asarray(mu, dtype=float))


def detection_logprobs(beta, mu, convention: str = "inverted"):
    """Log Pr(detected) and log Pr(non-detect) for a value below the bound.

    Under ``"eq2"`` the logistic gives the probability of detection; under
    ``"inverted"`` it gives the probability of a non-detect.
    """
    eta = beta[0] + beta[1] * np.asarray(mu, dtype=float)
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    pos = log_expit(eta)
    # log sigmoid(-x) = log sigmoid(x) - x
    neg = pos - eta
    return (pos, neg) if convention == "eq2" else (neg, pos)


def cell_means(theta: np.ndarray, data: Dataset) -> np.ndarray:
    return theta[:, data.partition] + data.delta[None, :]


def missingness_loglik(beta, mu, z, active, convention: str = "inverted") -> np.ndarray:
    """Cellwise log Pr(z | y, mu, beta).

    ``active`` marks non-detects whose (imputed) value lies below the
    detection bound; inactive non-detects have probability one.
    """
    log_obs, log_mis = detection_logprobs(beta, mu, convention)
    return np.where(z == 1, log_obs, np.where(active, log_mis, 0.0))


def _active_missing(data: Dataset, y_mis: np.ndarray, bound: float) -> np.ndarray:
    active = np.zeros(data.y.shape, dtype=bool)
    active[data.missing_index] = y_mis < bound
    return active


@lru_cache(maxsize=32)
def _beta_prior_terms(mu_beta: tuple, B: tuple):
    Bm = np.asarray(B, dtype=float)
    _, logdet = np.linalg.slogdet(Bm)
    return np.asarray(mu_beta, dtype=float), np.linalg.inv(Bm), -np.log(2 * np.pi) - 0.5 * logdet


def log_prior_beta(beta, priors: Priors) -> float:
    """Bivariate normal log density, -inf off the positive-slope support."""
    if priors.beta1_positive and beta[1] <= 0:
        return -np.inf
    mean, prec, const = _beta_prior_terms(tuple(priors.mu_beta), tuple(map(tuple, priors.B)))
    d = np.asarray(beta, dtype=float) - mean
    return float(-0.5 * d @ prec @ d + const)


def log_target_beta(
    beta,
    state: ChainState,
    data: Dataset,
    priors: Priors,
    convention: str = "inverted",
    bound: Optional[float] = None,
) -> float:
    """Unnormalized log full conditional of ``beta``.

    Bivariate normal prior (truncated to a positive slope when configured)
    plus the missingness log-likelihood over all cells.
    """
    state.check(data)
    lp = log_prior_beta(beta, priors)
    if not np.isfinite(lp):
        return lp
    bound = data.detection_bound if bound is None else bound
    mu = cell_means(state.theta, data)
    active = _active_missing(data, state.y_mis, bound)
    return lp + float(missingness_loglik(beta, mu, data.z, active, convention).sum())


def log_target_theta(
    i: int,
    k: int,
    theta,
    state: ChainState,
    data: Dataset,
    priors: Priors,
    convention: str = "inverted",
    bound: Optional[float] = None,
) -> np.ndarray:
    """Unnormalized log full conditional of ``theta[i, k]``.

    ``theta`` may be an array of candidate values. Non-detects contribute
    their current imputed values.
    """
    state.check(data)
    bound = data.detection_bound if bound is None else bound
    cand = np.asarray(theta, dtype=float)
    cols = np.flatnonzero(data.partition == k)
    y_row = data.completed(state.y_mis)[i, cols]
    z_row = data.z[i, cols]
    active = _active_missing(data, state.y_mis, bound)[i, cols]
    delta = data.delta[cols]
    s2, g2 = state.sigma2[i], state.gamma2[i]

    mu = cand[..., None] + delta
    out = -0.5 * (cand - priors.theta0) ** 2 / g2 - 0.5 * np.log(2 * np.pi * g2)
    out = out + np.sum(-0.5 * (y_row - mu) ** 2 / s2 - 0.5 * np.log(2 * np.pi * s2), axis=-1)
    out = out + np.sum(missingness_loglik(state.beta, mu, z_row, active, convention), axis=-1)
    return out
