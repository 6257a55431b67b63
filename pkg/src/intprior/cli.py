"""Command-line interface: ``intprior test``, ``intprior chains``, ``intprior oracle``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from . import __version__
from .core import LINK_KINDS, METHODS, get_link, posterior_probability
from .data import PRESETS, FactorSpec, load_dataset, load_preset, order_for_test
from .estimators import IrlsError, estimate_from_chain, fit_models
from .oracle import DEMO_SPECS, FiniteChainSpec, solve_oracle
from .sampler import ModelContext, chain_seed, run_chain, write_trace_csv

SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    preset: str | None = None
    data: str | None = None
    response: str | None = None
    trials: str | None = None
    factors: list = field(default_factory=list)
    covariates: list | None = None
    link: str = "logit"
    null: list = field(default_factory=list)
    chains: int = 1
    iters: int = 10000
    burnin: int | None = None
    seed: int = 0
    method: str = "importance_kde"
    is_draws: int | None = None
    workers: int = 1
    out: str | None = None

    def validate(self):
        if (self.preset is None) == (self.data is None):
            raise ValueError("give exactly one of --preset or --data")
        if self.data is not None and not self.response:
            raise ValueError("--data needs --response")
        if self.chains < 1 or self.iters < 1:
            raise ValueError("--chains and --iters must be at least 1")
        if self.burnin is not None and self.burnin < 0:
            raise ValueError("--burnin must be non-negative")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        get_link(self.link)


def _factor_specs(df: pd.DataFrame, items) -> list[FactorSpec]:
    specs = []
    for item in items:
        col, _, ref = item.partition("=")
        if col not in df.columns:
            raise ValueError(f"--factor names unknown column {col!r}")
        levels = sorted(df[col].astype(str).unique(), key=lambda v: (len(v), v))
        specs.append(FactorSpec(col, tuple(levels), ref or levels[0]))
    return specs


def _null_names(cfg: RunConfig) -> list:
    if cfg.preset is not None and not cfg.null:
        return list(PRESETS[cfg.preset]["null"])
    return list(cfg.null)


def build_context(cfg: RunConfig) -> ModelContext:
    """Load the data named by ``cfg`` and set up the test."""
    null = _null_names(cfg) if cfg.preset in PRESETS else cfg.null
    if cfg.preset is not None:
        if cfg.preset not in PRESETS:
            raise ValueError(f"unknown preset {cfg.preset!r}; choose from {sorted(PRESETS)}")
        data = load_preset(cfg.preset, null)
    else:
        df = pd.read_csv(cfg.data, dtype=str, encoding="utf-8")
        data = load_dataset(
            df,
            response_column=cfg.response,
            factor_specs=_factor_specs(df, cfg.factors),
            trials_column=cfg.trials,
            covariates=cfg.covariates,
        )
    if not null:
        raise ValueError("--null must name at least one covariate")
    data, test = order_for_test(data, null)
    return ModelContext(data, test, get_link(cfg.link))


def _one_chain(job):
    ctx, cfg, index, fits = job
    seed = chain_seed(cfg.seed, index)
    t0 = time.perf_counter()
    est, _ = estimate_from_chain(ctx, cfg.iters, cfg.method, seed, cfg.burnin, cfg.is_draws, fits)
    row = {"chain": index, "seed": seed, **est.as_dict()}
    return row, time.perf_counter() - t0


def _finite(x):
    return float(x) if np.isfinite(x) else None


def cmd_test(cfg: RunConfig) -> dict:
    """Run ``cfg.chains`` chains and pool their posterior probabilities."""
    cfg.validate()
    t0 = time.perf_counter()
    ctx = build_context(cfg)
    try:
        fits = fit_models(ctx)
    except IrlsError:
        if cfg.method.startswith("importance"):
            raise
        fits = None
    jobs = [(ctx, cfg, i, fits) for i in range(cfg.chains)]
    if cfg.workers > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.chains)) as pool:
            results = list(pool.map(_one_chain, jobs))
    else:
        results = [_one_chain(j) for j in jobs]
    per_chain = []
    for row, _ in results:
        row["mc_std_error"] = _finite(row["mc_std_error"])
        per_chain.append(row)
    probs = np.array([r["posterior_prob"] for r in per_chain])
    pooled = {
        "mean": float(probs.mean()),
        "sd": float(probs.std(ddof=1)) if len(probs) > 1 else 0.0,
        "n_chains": len(probs),
    }
    config = {k: v for k, v in asdict(cfg).items() if k not in ("out", "workers")}
    config["null"] = _null_names(cfg)
    config["burnin"] = cfg.iters // 10 if cfg.burnin is None else cfg.burnin
    config["is_draws"] = cfg.iters if cfg.is_draws is None else cfg.is_draws
    return {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "config": config,
        "design": {
            "columns": list(ctx.data.column_names),
            "k0": ctx.k0,
            "n": ctx.data.n,
            "mle_m2": fits[1].theta.tolist() if fits else None,
        },
        "per_chain": per_chain,
        "pooled": pooled,
        "timings": {
            "total_seconds": time.perf_counter() - t0,
            "per_chain_seconds": [dt for _, dt in results],
        },
    }


def cmd_chains(cfg: RunConfig, trace_out) -> dict:
    """Run one chain from ``chain_seed(seed, 0)`` and export its trace."""
    cfg.validate()
    ctx = build_context(cfg)
    trace = run_chain(ctx, cfg.iters, cfg.burnin, chain_seed(cfg.seed, 0))
    write_trace_csv(trace, trace_out, ctx.data.column_names)
    names = list(ctx.data.column_names)
    return {
        "schema_version": SCHEMA_VERSION,
        "records": trace.T,
        "prior_sd": dict(zip(names, trace.theta2.std(axis=0, ddof=1).tolist() if trace.T > 1 else [0.0] * len(names))),
        "prior_median": dict(zip(names, np.median(trace.theta2, axis=0).tolist())),
        "null_prior_sd": dict(zip(names[ctx.k0:], trace.theta1_free.std(axis=0, ddof=1).tolist() if trace.T > 1 else [0.0] * (len(names) - ctx.k0))),
    }


def cmd_oracle(spec: FiniteChainSpec) -> dict:
    """Exact log Bayes factor and stationary law for a two-row design."""
    res = solve_oracle(spec)
    return {
        "schema_version": SCHEMA_VERSION,
        "spec": {
            "a": spec.a,
            "b": spec.b,
            "trials": list(spec.trials),
            "successes": list(spec.successes),
            "n1_bound": spec.n1_bound,
            "n2_bounds": list(spec.n2_bounds),
            "link": spec.link.kind,
        },
        "log_bf21": res.log_bf21,
        "log_m1": res.log_m1,
        "log_m2": res.log_m2,
        "posterior_prob": posterior_probability(res.log_bf21),
        "states": spec.z2_states.tolist(),
        "stationary": res.stationary.tolist(),
    }


class _JsonArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message)
        sys.exit(2)


def _emit_error(kind, message):
    json.dump({"error": {"type": kind, "message": str(message)}}, sys.stderr)
    sys.stderr.write("\n")


def _add_run_flags(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--response", help="response column (0/1, or events with --trials)")
    p.add_argument("--trials", help="trials column for aggregated data")
    p.add_argument("--factor", action="append", default=[], metavar="COL[=REF]", help="dummy-encode COL against level REF")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all)")
    p.add_argument("--link", default="logit", choices=LINK_KINDS)
    p.add_argument("--null", action="append", default=[], metavar="NAME", help="covariate whose coefficients are zero under the null (repeatable)")
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--burnin", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", default="importance_kde", choices=METHODS)
    p.add_argument("--is-draws", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output path (default: standard output)")


def _config(ns, default_chains) -> RunConfig:
    preset = PRESETS.get(ns.preset, {})
    nulls = [v for item in ns.null for v in item.split(",") if v]
    return RunConfig(
        preset=ns.preset,
        data=ns.data,
        response=ns.response,
        trials=ns.trials,
        factors=list(ns.factor),
        covariates=ns.covariates.split(",") if ns.covariates else None,
        link=ns.link,
        null=nulls,
        chains=ns.chains if ns.chains is not None else preset.get("chains", default_chains),
        iters=ns.iters if ns.iters is not None else preset.get("iters", 10000),
        burnin=ns.burnin,
        seed=ns.seed,
        method=ns.method,
        is_draws=ns.is_draws,
        workers=ns.workers,
        out=ns.out,
    )


def make_parser() -> argparse.ArgumentParser:
    parser = _JsonArgumentParser(prog="intprior", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_JsonArgumentParser)

    p = sub.add_parser("test", help="estimate the posterior probability of the full model")
    _add_run_flags(p)
    p = sub.add_parser("chains", help="export an integral-prior chain trace as CSV")
    _add_run_flags(p)
    p = sub.add_parser("oracle", help="exact Bayes factor for a two-row design")
    p.add_argument("--demo", choices=sorted(DEMO_SPECS))
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--trials", type=int, nargs=2, metavar=("NA", "NB"))
    p.add_argument("--successes", type=int, nargs=2, metavar=("YA", "YB"))
    p.add_argument("--n1-bound", type=int)
    p.add_argument("--n2-bounds", type=int, nargs=2, metavar=("NA", "NB"))
    p.add_argument("--link", default="logit", choices=LINK_KINDS)
    p.add_argument("--out")
    return parser


def _write(obj, out):
    text = json.dumps(obj, indent=2, allow_nan=False)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def main(argv=None) -> int:
    ns = make_parser().parse_args(argv)
    try:
        if ns.command == "oracle":
            if ns.demo:
                spec = DEMO_SPECS[ns.demo]
            else:
                if ns.trials is None or ns.successes is None:
                    raise ValueError("oracle needs --demo or both --trials and --successes")
                spec = FiniteChainSpec(ns.a, ns.b, tuple(ns.trials), tuple(ns.successes), ns.n1_bound, tuple(ns.n2_bounds) if ns.n2_bounds else None, ns.link)
            _write(cmd_oracle(spec), ns.out)
        elif ns.command == "test":
            cfg = _config(ns, default_chains=1)
            _write(cmd_test(cfg), cfg.out)
        else:
            cfg = _config(ns, default_chains=1)
            if cfg.out:
                with open(cfg.out, "w", newline="", encoding="utf-8") as fh:
                    summary = cmd_chains(cfg, fh)
                _write(summary, None)
            else:
                summary = cmd_chains(cfg, sys.stdout)
                json.dump(summary, sys.stderr)
                sys.stderr.write("\n")
    except Exception as exc:  # every failure becomes a JSON error object
        _emit_error(type(exc).__name__, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
