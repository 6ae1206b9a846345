"""Command line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 parse error,
4 degenerate sampler state, 5 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .diagnostics import diagnose
from .estimators import (
    METHODS,
    fbi_estimates,
    score_against_truth,
    sensitivity_sweep,
    si_bayes_estimates,
    trunc_estimates,
)
from .io import (
    ParseError,
    ensure_dir,
    find_chains,
    load_chain,
    load_dataset,
    load_estimates,
    load_truth,
    save_chain,
    save_dataset,
    save_estimates,
    save_scores,
    save_truth,
    write_json,
)
from .model import DegenerateStateError
from .sampler import run_chains
from .simulate import missingness_summary, simulate_dataset, truncate_dataset

logger = logging.getLogger("qpcr_fbi")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_DEGENERATE, EXIT_IO = 0, 2, 3, 4, 5


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out: Path, command: str, cfg: RunConfig, inputs: list, outputs: list, extra=None) -> None:
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "outputs": [{"path": str(Path(p).relative_to(out)), "sha256": _sha256(p)} for p in outputs],
        "versions": {
            "qpcr_fbi": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        manifest.update(extra)
    write_json(out / "manifest.json", manifest)


def _resolve(args) -> RunConfig:
    """Config file values overridden by explicit command-line flags."""
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    sampler = {}
    for flag, key in (("draws", "n_draws"), ("burn_in", "burn_in"), ("thin", "thin"), ("convention", "convention")):
        value = getattr(args, flag, None)
        if value is not None:
            sampler[key] = value
    try:
        cfg.sampler = replace(cfg.sampler, seed=cfg.seed, **sampler)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for key in ("chains", "sims", "workers", "threshold"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    out = ensure_dir(args.out)
    data, truth = simulate_dataset(cfg.simulation, np.random.default_rng(cfg.seed))
    paths = [out / "dataset.csv", out / "truth.json", out / "summary.json"]
    save_dataset(paths[0], data)
    save_truth(paths[1], truth, data)
    write_json(paths[2], missingness_summary(data))
    _write_manifest(out, "simulate", cfg, [], paths)
    print(f"simulated {data.n_genes} genes x {data.n_samples} samples, {data.n_missing} non-detects -> {out}")
    return EXIT_OK


def cmd_truncate(args) -> int:
    cfg = _resolve(args)
    if cfg.threshold is None:
        raise ConfigError("truncate needs --threshold (or 'threshold' in the config)")
    out = ensure_dir(args.out)
    data = load_dataset(args.data, args.detection_bound)
    cut = truncate_dataset(data, cfg.threshold)
    paths = [out / "dataset.csv", out / "truncation_report.json"]
    save_dataset(paths[0], cut)
    report = {
        "threshold": cfg.threshold,
        "before": missingness_summary(data),
        "after": missingness_summary(cut),
    }
    write_json(paths[1], report)
    _write_manifest(out, "truncate", cfg, [args.data], paths)
    after = report["after"]
    print(
        f"missing {after['missing_fraction']:.2%} of cells in "
        f"{after['gene_fraction_with_missing']:.2%} of genes; "
        f"{len(after['all_missing_type_cells'])} all-missing gene/sample-type cells"
    )
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _resolve(args)
    out = ensure_dir(args.out)
    data = load_dataset(args.data, args.detection_bound)
    chains = run_chains(data, cfg.priors, cfg.sampler, n_chains=cfg.chains, workers=cfg.workers)
    paths = []
    for c, chain in enumerate(chains):
        cdir = out / "chains" / f"chain_{c}"
        save_chain(cdir, chain, data)
        paths += [cdir / f"{n}.npy" for n in ("theta", "sigma2", "gamma2", "beta", "y_mis")]
        paths.append(cdir / "meta.json")
    tables = [fbi_estimates(chains), si_bayes_estimates(chains, data), trunc_estimates(data)]
    save_estimates(out / "estimates.csv", tables, data)
    report = diagnose(chains)
    write_json(out / "diagnostics.json", report.to_dict())
    (out / "diagnostics.txt").write_text(report.to_text(), encoding="utf-8")
    paths += [out / "estimates.csv", out / "diagnostics.json", out / "diagnostics.txt"]
    _write_manifest(out, "fit", cfg, [args.data], paths)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _resolve(args)
    out = ensure_dir(args.out)
    dirs = find_chains(args.chain_dir)
    chains = [load_chain(d) for d in dirs]
    report = diagnose(chains)
    paths = [out / "diagnostics.json", out / "diagnostics.txt"]
    write_json(paths[0], report.to_dict())
    paths[1].write_text(report.to_text(), encoding="utf-8")
    inputs = [d / "meta.json" for d in dirs]
    _write_manifest(out, "diagnose", cfg, inputs, paths)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _resolve(args)
    if len(args.estimates) != len(args.truth):
        raise ConfigError("--estimates and --truth must be given the same number of times")
    out = ensure_dir(args.out)
    per_file = [load_estimates(p) for p in args.estimates]
    truths = [load_truth(p) for p in args.truth]
    summaries = []
    for method in METHODS:
        tables = [f.get(method) for f in per_file]
        if any(t is None for t in tables):
            continue
        s = score_against_truth(tables, truths, pooling=cfg.pooling)
        s.label = args.label
        summaries.append(s)
    if not summaries:
        raise ParseError("no estimation method is present in every estimates file")
    save_scores(out / "scores.csv", summaries)
    _write_manifest(out, "score", cfg, [*args.estimates, *args.truth], [out / "scores.csv"])
    print(f"scored {len(truths)} replicate(s) -> {out / 'scores.csv'}")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    cfg = _resolve(args)
    out = ensure_dir(args.out)
    rows = sensitivity_sweep(
        cfg.simulation, cfg.prior_grid, cfg.sampler, n_sims=cfg.sims,
        workers=cfg.workers, pooling=cfg.pooling, seed=cfg.seed,
    )
    paths = [out / "scores.csv", out / "scores_all_methods.csv"]
    save_scores(paths[0], [r.summaries["FBI"] for r in rows])
    save_scores(paths[1], [r.summaries[m] for r in rows for m in METHODS])
    _write_manifest(out, "sensitivity", cfg, [], paths)
    for r in rows:
        s = r.summaries["FBI"]
        print(
            f"{r.label}: theta bias {s.get('theta', 'bias'):+.3f} mse {s.get('theta', 'mse'):.3f}; "
            f"sigma2 bias {s.get('sigma2', 'bias'):+.3f} mse {s.get('sigma2', 'mse'):.3f}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpcr-fbi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output directory")

    def sampling(p):
        p.add_argument("--draws", type=int, help="total sweeps including burn-in")
        p.add_argument("--burn-in", dest="burn_in", type=int)
        p.add_argument("--thin", type=int)
        p.add_argument("--convention", choices=("eq2", "inverted"))
        p.add_argument("--workers", type=int)

    p = sub.add_parser("simulate", help="simulate a dataset with MNAR non-detects")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the sampler on a CSV dataset")
    common(p)
    sampling(p)
    p.add_argument("--data", required=True)
    p.add_argument("--chains", type=int)
    p.add_argument("--detection-bound", dest="detection_bound", type=float, default=40.0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("truncate", help="turn values at or above a threshold into non-detects")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--detection-bound", dest="detection_bound", type=float, default=40.0)
    p.set_defaults(func=cmd_truncate)

    p = sub.add_parser("sensitivity", help="simulation study over a grid of variance priors")
    common(p)
    sampling(p)
    p.add_argument("--sims", type=int)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("diagnose", help="ESS and split R-hat for saved chains")
    common(p)
    p.add_argument("--chains", dest="chain_dir", required=True, help="fit output directory or chain directory")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("score", help="score estimate files against truth records")
    common(p)
    p.add_argument("--estimates", action="append", required=True)
    p.add_argument("--truth", action="append", required=True)
    p.add_argument("--label", default="")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    for key in ("chains", "sims", "workers"):
        value = getattr(args, key, None)
        if isinstance(value, int) and value < 1:
            parser.error(f"--{key} must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DegenerateStateError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
