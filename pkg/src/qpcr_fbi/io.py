"""Reading and writing datasets, chains, estimates, scores and truth records."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimators import QUANTILES, EstimateTable, ScoreSummary
from .model import Dataset, Priors, SamplerSettings, VariancePrior
from .sampler import ChainOutput
from .simulate import TruthRecord

logger = logging.getLogger(__name__)

ND_TOKEN = "ND"
_CHAIN_ARRAYS = ("theta", "sigma2", "gamma2", "beta", "y_mis")


class ParseError(ValueError):
    """Malformed input file."""


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def load_dataset(path, detection_bound: float = 40.0) -> Dataset:
    """Read a delta-Ct matrix CSV.

    Row 1 is ``gene_id,<sample ids>``, row 2 is ``sample_type,<labels>``, an
    optional ``delta`` row may follow, then one row per gene. ``ND`` or any
    value at or above ``detection_bound`` is a non-detect; values strictly
    above the bound are reported with a warning.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(cell.strip() for cell in r)]
    if len(rows) < 3:
        raise ParseError(f"{path}: need a header, a sample_type row and at least one gene row")
    header = [c.strip() for c in rows[0]]
    width = len(header)
    if width < 2 or header[0] != "gene_id":
        raise ParseError(f"{path}: row 1, column 1: expected 'gene_id'")
    for r, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ParseError(f"{path}: row {r}: expected {width} columns, found {len(row)}")
    if rows[1][0].strip() != "sample_type":
        raise ParseError(f"{path}: row 2, column 1: expected 'sample_type'")
    labels = [c.strip() for c in rows[1][1:]]
    for c, lab in enumerate(labels, start=2):
        if not lab:
            raise ParseError(f"{path}: row 2, column {c}: empty sample-type label")
    type_labels = list(dict.fromkeys(labels))
    partition = [type_labels.index(lab) for lab in labels]

    body_start = 2
    delta = None
    if rows[2][0].strip() == "delta":
        delta = []
        for c, cell in enumerate(rows[2][1:], start=2):
            try:
                delta.append(float(cell))
            except ValueError:
                raise ParseError(f"{path}: row 3, column {c}: bad delta value {cell!r}") from None
        body_start = 3
    body = rows[body_start:]
    if not body:
        raise ParseError(f"{path}: no gene rows")

    n_genes, n_samples = len(body), width - 1
    y = np.full((n_genes, n_samples), np.nan)
    z = np.zeros((n_genes, n_samples), dtype=np.int8)
    gene_ids = []
    coerced = 0
    for i, row in enumerate(body):
        r = body_start + i + 1
        gene_ids.append(row[0].strip())
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell.upper() == ND_TOKEN:
                continue
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {r}, column {j + 2}: cannot parse {cell!r}") from None
            if not np.isfinite(value) or value <= 0:
                raise ParseError(f"{path}: row {r}, column {j + 2}: value must be positive and finite")
            if value >= detection_bound:
                if value > detection_bound:
                    coerced += 1
                    logger.warning(
                        "%s: row %d, column %d: %g exceeds detection bound %g, treated as non-detect",
                        path, r, j + 2, value, detection_bound,
                    )
                continue
            y[i, j] = value
            z[i, j] = 1
    if len(set(gene_ids)) != len(gene_ids):
        raise ParseError(f"{path}: duplicate gene ids")
    return Dataset(
        y=y, z=z, partition=partition, delta=delta, gene_ids=gene_ids,
        sample_ids=header[1:], type_labels=type_labels, detection_bound=float(detection_bound),
    )


def save_dataset(path, data: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gene_id", *data.sample_ids])
        w.writerow(["sample_type", *(data.type_labels[k] for k in data.partition)])
        if np.any(data.delta != 0):
            w.writerow(["delta", *(repr(float(d)) for d in data.delta)])
        for i, gene in enumerate(data.gene_ids):
            w.writerow([gene, *(repr(float(v)) if z else ND_TOKEN for v, z in zip(data.y[i], data.z[i]))])


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------


def _settings_dict(settings: SamplerSettings) -> dict:
    d = asdict(settings)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def save_chain(path, chain: ChainOutput, data: Optional[Dataset] = None) -> None:
    """Write a chain as a directory of ``.npy`` arrays plus ``meta.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name in _CHAIN_ARRAYS:
        np.save(path / f"{name}.npy", getattr(chain, name), allow_pickle=False)
    meta = {
        "seed": chain.seed,
        "settings": _settings_dict(chain.settings),
        "priors": asdict(chain.priors),
        "acceptance": chain.acceptance,
        "beta_steps": list(chain.beta_steps),
        "extra": chain.extra,
    }
    if data is not None:
        rows, cols = data.missing_index
        meta["gene_ids"] = data.gene_ids
        meta["type_labels"] = data.type_labels
        meta["missing_cells"] = [[data.gene_ids[i], data.sample_ids[j]] for i, j in zip(rows, cols)]
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_chain(path) -> ChainOutput:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}/meta.json: {exc.msg}") from None
    arrays = {name: np.load(path / f"{name}.npy", allow_pickle=False) for name in _CHAIN_ARRAYS}
    s = meta["settings"]
    settings = SamplerSettings(**{k: tuple(v) if isinstance(v, list) else v for k, v in s.items()})
    p = meta["priors"]
    priors = Priors(
        theta0=p["theta0"],
        sigma_prior=VariancePrior(**p["sigma_prior"]),
        gamma_prior=VariancePrior(**p["gamma_prior"]),
        mu_beta=tuple(p["mu_beta"]),
        B=tuple(tuple(r) for r in p["B"]),
        beta1_positive=p["beta1_positive"],
    )
    extra = dict(meta.get("extra", {}))
    for key in ("gene_ids", "type_labels", "missing_cells"):
        if key in meta:
            extra[key] = meta[key]
    return ChainOutput(
        **arrays, acceptance=meta["acceptance"], settings=settings, priors=priors,
        seed=meta["seed"], beta_steps=tuple(meta["beta_steps"]), extra=extra,
    )


def find_chains(path) -> list:
    """Chain directories at ``path`` itself or directly/under ``chains/`` below it."""
    path = Path(path)
    if (path / "meta.json").exists():
        return [path]
    for base in (path / "chains", path):
        found = sorted(p for p in base.glob("chain_*") if (p / "meta.json").exists())
        if found:
            return found
    raise FileNotFoundError(f"no chain directories under {path}")


# ---------------------------------------------------------------------------
# Estimates, scores, truth
# ---------------------------------------------------------------------------


def save_estimates(path, tables, data: Optional[Dataset] = None) -> None:
    """Long-format CSV: method, gene_id, parameter, sample_type, estimate."""
    if isinstance(tables, EstimateTable):
        tables = [tables]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "gene_id", "parameter", "sample_type", "estimate"])
        for t in tables:
            n_genes, n_types = t.theta_hat.shape
            genes = data.gene_ids if data is not None else [f"gene_{i + 1}" for i in range(n_genes)]
            types = data.type_labels if data is not None else [f"type_{k + 1}" for k in range(n_types)]
            for i in range(n_genes):
                for k in range(n_types):
                    w.writerow([t.method, genes[i], "theta", types[k], _fmt(t.theta_hat[i, k])])
                w.writerow([t.method, genes[i], "sigma2", "", _fmt(t.sigma2_hat[i])])


def load_estimates(path) -> dict:
    """Read an estimates CSV into ``{method: EstimateTable}`` (row order defines indices)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["method", "gene_id", "parameter", "sample_type", "estimate"]
        if reader.fieldnames != expected:
            raise ParseError(f"{path}: header must be {','.join(expected)}")
        rows = list(reader)
    out = {}
    for method in dict.fromkeys(r["method"] for r in rows):
        sub = [r for r in rows if r["method"] == method]
        genes = list(dict.fromkeys(r["gene_id"] for r in sub))
        types = list(dict.fromkeys(r["sample_type"] for r in sub if r["parameter"] == "theta"))
        theta = np.full((len(genes), len(types)), np.nan)
        sigma2 = np.full(len(genes), np.nan)
        for n, r in enumerate(sub, start=2):
            try:
                value = float(r["estimate"]) if r["estimate"] else np.nan
            except ValueError:
                raise ParseError(f"{path}: row {n}: bad estimate {r['estimate']!r}") from None
            i = genes.index(r["gene_id"])
            if r["parameter"] == "theta":
                theta[i, types.index(r["sample_type"])] = value
            elif r["parameter"] == "sigma2":
                sigma2[i] = value
            else:
                raise ParseError(f"{path}: row {n}: unknown parameter {r['parameter']!r}")
        try:
            out[method] = EstimateTable(method, theta, sigma2)
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from None
    return out


SCORE_HEADER = ["prior", "method", "parameter"] + [
    f"{metric}_q{int(q * 100)}" for metric in ("bias", "mse") for q in QUANTILES
]


def save_scores(path, summaries: Sequence[ScoreSummary]) -> None:
    """Table-shaped CSV: one row per (prior, method, parameter family)."""
    if isinstance(summaries, ScoreSummary):
        summaries = [summaries]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_HEADER)
        for s in summaries:
            for family in ("theta", "sigma2"):
                vals = s.values[family]
                w.writerow([s.label, s.method, family, *(_fmt(v) for m in ("bias", "mse") for v in vals[m])])


def save_truth(path, truth: TruthRecord, data: Optional[Dataset] = None) -> None:
    doc = {
        "theta": truth.theta.tolist(),
        "sigma2": truth.sigma2.tolist(),
        "mu_theta": truth.mu_theta.tolist(),
        "y_complete": truth.y_complete.tolist(),
        "missing_by_indicator": truth.missing_by_indicator.astype(int).tolist(),
        "beta": list(truth.beta),
        "convention": truth.convention,
    }
    if data is not None:
        doc["gene_ids"] = data.gene_ids
        doc["type_labels"] = data.type_labels
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_truth(path) -> TruthRecord:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return TruthRecord(
            theta=np.asarray(doc["theta"], dtype=float),
            sigma2=np.asarray(doc["sigma2"], dtype=float),
            mu_theta=np.asarray(doc["mu_theta"], dtype=float),
            y_complete=np.asarray(doc["y_complete"], dtype=float),
            missing_by_indicator=np.asarray(doc["missing_by_indicator"], dtype=bool),
            beta=tuple(doc["beta"]),
            convention=doc["convention"],
            extra={k: doc[k] for k in ("gene_ids", "type_labels") if k in doc},
        )
    except (json.JSONDecodeError, KeyError) as exc:
        raise ParseError(f"{path}: not a truth record ({exc})") from None


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
