"""JSON run configuration: schema validation and conversion to typed settings.

Every key is optional; omitted values fall back to the library defaults.
Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import jsonschema

from .estimators import PriorSpec, table1_grid
from .io import ParseError
from .model import Priors, SamplerSettings, VariancePrior
from .simulate import SimConfig

DEFAULT_SEED = 1


class ConfigError(ValueError):
    """Configuration does not match the schema."""


_number = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_pair = {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}

VARIANCE_PRIOR_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["uniform_sd", "uniform_var", "inv_gamma"]},
        "A": {"type": "number", "exclusiveMinimum": 0},
        "shape": {"type": "number", "exclusiveMinimum": 0},
        "scale": {"type": "number", "exclusiveMinimum": 0},
    },
}

PRIORS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "theta0": _number,
        "sigma_prior": VARIANCE_PRIOR_SCHEMA,
        "gamma_prior": VARIANCE_PRIOR_SCHEMA,
        "mu_beta": _pair,
        "B": {"type": "array", "items": _pair, "minItems": 2, "maxItems": 2},
        "beta1_positive": {"type": "boolean"},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "priors": PRIORS_SCHEMA,
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_draws": _pos_int,
                "burn_in": {"type": "integer", "minimum": 0},
                "thin": _pos_int,
                "beta_steps": _pair,
                "adapt_window": _pos_int,
                "detection_bound": {"type": "number", "exclusiveMinimum": 0},
                "convention": {"enum": ["eq2", "inverted"]},
                "fix_beta": _pair,
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_genes": _pos_int,
                "n_types": _pos_int,
                "reps_per_type": _pos_int,
                "beta_true": _pair,
                "sigma_theta_sq": {"type": "number", "exclusiveMinimum": 0},
                "mu_theta_mean": _number,
                "mu_theta_sd": {"type": "number", "exclusiveMinimum": 0},
                "mu_theta_bounds": _pair,
                "sigma2_range": _pair,
                "delta": {"type": "array", "items": _number},
                "detection_bound": {"type": "number", "exclusiveMinimum": 0},
                "convention": {"enum": ["eq2", "inverted"]},
            },
        },
        "prior_grid": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["label"],
                "properties": {"label": {"type": "string"}, **PRIORS_SCHEMA["properties"]},
            },
        },
        "chains": _pos_int,
        "sims": _pos_int,
        "workers": _pos_int,
        "pooling": {"enum": ["cell", "pooled"]},
        "threshold": {"type": "number", "exclusiveMinimum": 0},
    },
}


@dataclass
class RunConfig:
    seed: int = DEFAULT_SEED
    priors: Priors = field(default_factory=Priors)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    simulation: SimConfig = field(default_factory=SimConfig)
    prior_grid: list = field(default_factory=table1_grid)
    chains: int = 2
    sims: int = 100
    workers: int = 1
    pooling: str = "cell"
    threshold: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "priors": priors_to_dict(self.priors),
            "sampler": _clean(asdict(replace(self.sampler, seed=None))),
            "simulation": _clean(asdict(replace(self.simulation, seed=None))),
            "prior_grid": [{"label": p.label, **priors_to_dict(p.priors)} for p in self.prior_grid],
            "chains": self.chains,
            "sims": self.sims,
            "workers": self.workers,
            "pooling": self.pooling,
            "threshold": self.threshold,
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _clean(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if k == "seed":
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def priors_to_dict(priors: Priors) -> dict:
    d = asdict(priors)
    d["mu_beta"] = list(priors.mu_beta)
    d["B"] = [list(r) for r in priors.B]
    return d


def priors_from_dict(d: dict, base: Optional[Priors] = None) -> Priors:
    base = base or Priors()
    kw = {}
    for key in ("sigma_prior", "gamma_prior"):
        if key in d:
            kw[key] = VariancePrior(**d[key])
    if "mu_beta" in d:
        kw["mu_beta"] = tuple(d["mu_beta"])
    if "B" in d:
        kw["B"] = tuple(tuple(r) for r in d["B"])
    for key in ("theta0", "beta1_positive"):
        if key in d:
            kw[key] = d[key]
    return replace(base, **kw)


def _tupled(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def parse_config(doc: dict) -> RunConfig:
    """Validate a configuration document and build a ``RunConfig``."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    try:
        cfg = RunConfig()
        if "seed" in doc:
            cfg.seed = doc["seed"]
        if "priors" in doc:
            cfg.priors = priors_from_dict(doc["priors"])
        if "sampler" in doc:
            cfg.sampler = SamplerSettings(**_tupled(doc["sampler"]))
        if "simulation" in doc:
            cfg.simulation = SimConfig(**_tupled(doc["simulation"]))
        if "prior_grid" in doc:
            cfg.prior_grid = [
                PriorSpec(entry["label"], priors_from_dict({k: v for k, v in entry.items() if k != "label"}))
                for entry in doc["prior_grid"]
            ]
        for key in ("chains", "sims", "workers", "pooling", "threshold"):
            if key in doc:
                setattr(cfg, key, doc[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config error: {exc}") from None
    return cfg


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(doc)
