import json

import pytest

from qpcr_fbi.config import ConfigError, RunConfig, load_config, parse_config
from qpcr_fbi.io import ParseError
from qpcr_fbi.model import InverseGamma, Priors, SamplerSettings, UniformOnVariance


def test_defaults():
    cfg = parse_config({})
    assert cfg.priors == Priors() and cfg.sampler == SamplerSettings()
    assert cfg.sims == 100 and cfg.chains == 2 and cfg.pooling == "cell"
    assert len(cfg.prior_grid) == 8
    assert load_config(None).hash() == cfg.hash()


def test_full_document(tmp_path):
    doc = {
        "seed": 3,
        "priors": {"theta0": 55, "sigma_prior": {"kind": "inv_gamma", "shape": 1, "scale": 10}},
        "sampler": {"n_draws": 500, "burn_in": 100, "beta_steps": [0.3, 0.05], "convention": "eq2"},
        "simulation": {"n_genes": 4, "beta_true": [-30, 1]},
        "prior_grid": [{"label": "var10", "sigma_prior": {"kind": "uniform_var", "A": 10}}],
        "sims": 5,
        "pooling": "pooled",
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    cfg = load_config(str(path))
    assert cfg.seed == 3 and cfg.priors.theta0 == 55
    assert cfg.priors.sigma_prior == InverseGamma(1, 10)
    assert cfg.sampler.beta_steps == (0.3, 0.05) and cfg.sampler.convention == "eq2"
    assert cfg.simulation.n_genes == 4 and cfg.simulation.beta_true == (-30, 1)
    assert cfg.prior_grid[0].priors.sigma_prior == UniformOnVariance(10)
    assert cfg.sims == 5 and cfg.pooling == "pooled"


@pytest.mark.parametrize(
    "doc",
    [
        {"unknown": 1},
        {"sampler": {"n_draws": 0}},
        {"sampler": {"burnin": 10}},
        {"priors": {"sigma_prior": {"kind": "flat"}}},
        {"pooling": "median"},
        {"sampler": {"n_draws": 100, "burn_in": 100}},
        {"priors": {"B": [[1, 2], [2, 1]]}},
    ],
)
def test_rejected(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_invalid_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{seed: 1")
    with pytest.raises(ParseError, match="line 1"):
        load_config(str(path))


def test_hash_tracks_content():
    a, b = RunConfig(), RunConfig()
    assert a.hash() == b.hash()
    b.sims = 7
    assert a.hash() != b.hash()
