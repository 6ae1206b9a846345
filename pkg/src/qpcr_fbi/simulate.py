"""Synthetic qPCR data with non-random non-detects, plus data truncation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .distributions import draw_truncated_normal
from .model import CONVENTIONS, Dataset, logistic_prob

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    n_genes: int = 16
    n_types: int = 6
    reps_per_type: int = 6
    beta_true: tuple = (-35.7, 1.0)
    sigma_theta_sq: float = 3.0
    mu_theta_mean: float = 31.0
    mu_theta_sd: float = 3.5**0.5
    mu_theta_bounds: tuple = (20.0, 40.5)
    sigma2_range: tuple = (0.06, 1.3)
    delta: Optional[tuple] = None
    detection_bound: float = 40.0
    convention: str = "inverted"
    seed: Optional[int] = None

    def __post_init__(self):
        if min(self.n_genes, self.n_types, self.reps_per_type) < 1:
            raise ValueError("counts must be positive")
        lo, hi = self.mu_theta_bounds
        if not lo < hi:
            raise ValueError("mu_theta_bounds must be ordered")
        lo, hi = self.sigma2_range
        if not 0 < lo < hi:
            raise ValueError("sigma2_range must be positive and ordered")
        if self.sigma_theta_sq <= 0 or self.mu_theta_sd <= 0:
            raise ValueError("spreads must be positive")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")
        if self.delta is not None and len(self.delta) != self.n_samples:
            raise ValueError("delta needs one entry per sample")

    @property
    def n_samples(self) -> int:
        return self.n_types * self.reps_per_type


@dataclass
class TruthRecord:
    """Latent quantities behind a simulated dataset."""

    theta: np.ndarray
    sigma2: np.ndarray
    mu_theta: np.ndarray
    y_complete: np.ndarray
    missing_by_indicator: np.ndarray
    beta: tuple
    convention: str
    extra: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, TruthRecord):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("theta", "sigma2", "mu_theta", "y_complete", "missing_by_indicator")
        ) and tuple(self.beta) == tuple(other.beta) and self.convention == other.convention


def simulate_dataset(config: SimConfig, rng: Optional[np.random.Generator] = None):
    """Complete data first, then MNAR removal and censoring at the bound.

    Returns ``(Dataset, TruthRecord)``.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n_genes, n_types, n_samples = config.n_genes, config.n_types, config.n_samples
    lo, hi = config.mu_theta_bounds
    mu_theta = np.atleast_1d(draw_truncated_normal(
        config.mu_theta_mean, config.mu_theta_sd, lo, hi, rng, size=(n_genes,)
    ))
    theta = mu_theta[:, None] + np.sqrt(config.sigma_theta_sq) * rng.standard_normal((n_genes, n_types))
    sigma2 = rng.uniform(*config.sigma2_range, size=n_genes)
    partition = np.repeat(np.arange(n_types), config.reps_per_type)
    delta = np.zeros(n_samples) if config.delta is None else np.asarray(config.delta, dtype=float)
    mu = theta[:, partition] + delta
    y = mu + np.sqrt(sigma2)[:, None] * rng.standard_normal((n_genes, n_samples))

    p = logistic_prob(config.beta_true, mu)
    hit = rng.random((n_genes, n_samples)) < p
    missing = hit if config.convention == "inverted" else ~hit
    censored = y >= config.detection_bound
    z = (~(missing | censored)).astype(np.int8)

    data = Dataset(
        y=np.where(z == 1, y, np.nan),
        z=z,
        partition=partition,
        delta=delta,
        detection_bound=config.detection_bound,
    )
    truth = TruthRecord(
        theta=theta, sigma2=sigma2, mu_theta=mu_theta, y_complete=y,
        missing_by_indicator=missing, beta=tuple(config.beta_true), convention=config.convention,
    )
    return data, truth


def truncate_dataset(data: Dataset, threshold: float) -> Dataset:
    """Turn every observed value >= ``threshold`` into a non-detect."""
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    cut = (data.z == 1) & (data.y >= threshold)
    z = np.where(cut, 0, data.z)
    out = Dataset(
        y=np.where(z == 1, data.y, np.nan),
        z=z,
        partition=data.partition.copy(),
        delta=data.delta.copy(),
        gene_ids=list(data.gene_ids),
        sample_ids=list(data.sample_ids),
        type_labels=list(data.type_labels),
        detection_bound=min(data.detection_bound, float(threshold)),
    )
    empty = all_missing_cells(out)
    if empty:
        logger.warning("truncation at %g leaves %d gene/sample-type cells with no detections", threshold, len(empty))
    return out


def all_missing_cells(data: Dataset) -> list:
    """(gene_id, type_label) pairs whose replicates are all non-detects."""
    counts = (data.z == 1).astype(float) @ data.type_matrix()
    return [(data.gene_ids[i], data.type_labels[k]) for i, k in zip(*np.nonzero(counts == 0))]


def missingness_summary(data: Dataset) -> dict:
    missing = data.z == 0
    return {
        "cells": int(missing.size),
        "missing_cells": int(missing.sum()),
        "missing_fraction": float(missing.mean()),
        "genes_with_missing": int(missing.any(axis=1).sum()),
        "gene_fraction_with_missing": float(missing.any(axis=1).mean()),
        "all_missing_type_cells": [list(c) for c in all_missing_cells(data)],
    }
