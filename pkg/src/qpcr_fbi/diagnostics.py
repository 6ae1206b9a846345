"""Effective sample size, split R-hat and chain summary reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

ESS_THRESHOLD = 100.0
RHAT_THRESHOLD = 1.1


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation at all lags via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(series) -> float:
    """ESS by Geyer's initial monotone positive sequence.

    Sums of adjacent autocorrelation pairs are truncated at the first
    non-positive pair and forced to be non-increasing. The result is capped
    at the series length.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 10:
        raise ValueError("ESS needs at least 10 draws")
    if np.ptp(x) == 0 or not np.all(np.isfinite(x)):
        raise ValueError("ESS is undefined for a constant or non-finite series")
    rho = autocorrelation(x)
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    positive = pairs > 0
    stop = n_pairs if positive.all() else int(np.argmin(positive))
    pairs = np.minimum.accumulate(pairs[:stop])
    tau = -1.0 + 2.0 * pairs.sum()
    return float(min(n, n / max(tau, 1e-12)))


def split_rhat(chains: Sequence) -> float:
    """Potential scale reduction after splitting every chain in half."""
    arrays = [np.asarray(c, dtype=float).ravel() for c in chains]
    if len({a.size for a in arrays}) > 1:
        raise ValueError("chains must have equal length")
    half = arrays[0].size // 2
    if half < 2:
        raise ValueError("chains too short to split")
    splits = []
    for a in arrays:
        splits.extend((a[:half], a[-half:]))
    if len(splits) < 2:
        raise ValueError("need at least 2 split chains")
    s = np.array(splits)
    n = s.shape[1]
    within = s.var(axis=1, ddof=1).mean()
    between = n * s.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float("inf")
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


@dataclass
class DiagnosticsReport:
    ess: dict
    average_ess: float
    rhat: dict
    acceptance: list
    flagged: list
    y_mis_ess: dict = field(default_factory=dict)
    average_y_mis_ess: float = float("nan")
    n_chains: int = 1
    draws_per_chain: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    def to_text(self) -> str:
        lines = [
            f"chains: {self.n_chains}  draws/chain: {self.draws_per_chain}",
            f"average ESS (theta, sigma2, beta): {self.average_ess:.1f}",
            f"average ESS (imputed y): {self.average_y_mis_ess:.1f}",
        ]
        finite = [v for v in self.rhat.values() if np.isfinite(v)]
        if finite:
            lines.append(f"max split R-hat: {max(finite):.4f}")
        for c, acc in enumerate(self.acceptance):
            lines.append(f"chain {c} acceptance: " + ", ".join(f"{k}={v:.3f}" for k, v in sorted(acc.items())))
        if self.flagged:
            lines.append(f"flagged ({len(self.flagged)}): " + ", ".join(self.flagged))
        else:
            lines.append("flagged: none")
        return "\n".join(lines) + "\n"


def parameter_series(chain) -> dict:
    """Named 1-d draw series for theta, sigma2 and beta."""
    out = {}
    _, n_genes, n_types = chain.theta.shape
    for i in range(n_genes):
        for k in range(n_types):
            out[f"theta[{i},{k}]"] = chain.theta[:, i, k]
    for i in range(n_genes):
        out[f"sigma2[{i}]"] = chain.sigma2[:, i]
    out["beta0"] = chain.beta[:, 0]
    out["beta1"] = chain.beta[:, 1]
    return out


def _ess_total(series_list):
    try:
        return float(sum(effective_sample_size(s) for s in series_list))
    except ValueError:
        return float("nan")


def diagnose(chains: Sequence, ess_threshold: float = ESS_THRESHOLD, rhat_threshold: float = RHAT_THRESHOLD) -> DiagnosticsReport:
    """ESS (summed over chains) and split R-hat for every theta, sigma2 and beta.

    Imputed values are summarized separately and are not flagged.
    """
    chains = list(chains)
    if not chains:
        raise ValueError("no chains to diagnose")
    per_chain = [parameter_series(c) for c in chains]
    ess, rhat, flagged = {}, {}, []
    for name in per_chain[0]:
        series = [pc[name] for pc in per_chain]
        ess[name] = _ess_total(series)
        try:
            rhat[name] = split_rhat(series)
        except ValueError:
            rhat[name] = float("nan")
        if not ess[name] >= ess_threshold or rhat[name] > rhat_threshold:
            flagged.append(name)
    y_ess = {}
    if chains[0].y_mis.shape[1]:
        for m in range(chains[0].y_mis.shape[1]):
            y_ess[f"y_mis[{m}]"] = _ess_total([c.y_mis[:, m] for c in chains])
    values = np.array(list(ess.values()))
    y_values = np.array(list(y_ess.values())) if y_ess else np.array([np.nan])
    return DiagnosticsReport(
        ess=ess,
        average_ess=float(np.nanmean(values)) if np.isfinite(values).any() else float("nan"),
        rhat=rhat,
        acceptance=[dict(c.acceptance) for c in chains],
        flagged=flagged,
        y_mis_ess=y_ess,
        average_y_mis_ess=float(np.nanmean(y_values)) if np.isfinite(y_values).any() else float("nan"),
        n_chains=len(chains),
        draws_per_chain=int(chains[0].n_draws),
    )
