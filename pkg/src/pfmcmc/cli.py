"""Command-line interface: ``pfmcmc {simulate,filter,sample,evidence,diag,study}``.

Exit codes: 0 success, 1 usage error, 2 configuration or input error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

from .config import RunConfig
from .diagnostics import chain_summary, loglik_sd_study
from .errors import ConfigError, IngestError, PfmcmcError, TransformError, UnsupportedVariant
from .evidence import evidence_from_chain
from .filters import VARIANTS, kalman_loglik
from .io import dataset_csv, load_chain, load_dataset, read_json, table_csv, write_chain, write_dataset, write_json, write_table
from .models import DEFAULT_THETA, MODELS, make_model, simulate_data
from .parallel import MODES, WorkPool, default_workers
from .rng import RandomStream
from .samplers import SAMPLERS, run_chain
from .studies import SCALES, STUDIES, run_study

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
_CONFIG_ERRORS = (ConfigError, IngestError, UnsupportedVariant, TransformError)
_SIMULATE = 8

log = logging.getLogger("pfmcmc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _assignment(text: str):
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{name} needs a number, got {value!r}") from None


def _option(text: str):
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    return name.strip(), value.strip()


def _add_model_args(p):
    p.add_argument("--model", default="ar1", choices=sorted(MODELS))
    p.add_argument("--model-option", action="append", type=_option, default=[], metavar="NAME=VALUE",
                   help="model constructor option, e.g. trials=500")
    p.add_argument("--theta", action="append", type=_assignment, default=[], metavar="NAME=VALUE",
                   help="parameter value (defaults per model)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pfmcmc", description="Particle filters and adaptive particle-marginal MCMC.")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a dataset to CSV")
    _add_model_args(p)
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="output CSV (default: stdout)")

    p = sub.add_parser("filter", help="replicate the simulated log-likelihood at fixed parameters")
    _add_model_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--variant", nargs="+", default=["fapf"], choices=VARIANTS + ("kalman",))
    p.add_argument("--M", nargs="+", type=int, default=[100])
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", help="JSON report path")

    p = sub.add_parser("sample", help="run an adaptive PMMH chain")
    p.add_argument("--config", help="JSON run configuration; flags override its entries")
    p.add_argument("--model", choices=sorted(MODELS))
    p.add_argument("--model-option", action="append", type=_option, default=None, metavar="NAME=VALUE")
    p.add_argument("--data")
    p.add_argument("--theta", action="append", type=_assignment, default=None, metavar="NAME=VALUE")
    p.add_argument("--fixed", action="append", type=_assignment, default=None, metavar="NAME=VALUE")
    p.add_argument("--variant", choices=VARIANTS + ("kalman",))
    p.add_argument("--M", dest="particles", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--sampler", choices=SAMPLERS)
    p.add_argument("--n-iter", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--workers", type=int)
    p.add_argument("--block", type=int)
    p.add_argument("--backend", choices=("serial", "thread", "process"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="output", help="output directory")

    p = sub.add_parser("evidence", help="bridge and importance-sampling evidence from a chain")
    p.add_argument("--chain", required=True, help="chain CSV written by 'sample'")
    p.add_argument("--burn-in", type=int, default=None, help="default: the chain's own burn-in")
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--K", type=int, default=None, help="proposal draws (default: retained iterates)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", help="evidence JSON (default: next to the chain)")

    p = sub.add_parser("diag", help="IF, ECT and acceptance table for a chain")
    p.add_argument("--chain", required=True)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--coords", choices=("natural", "unconstrained"), default="natural")
    p.add_argument("--out", help="CSV table (default: stdout)")

    p = sub.add_parser("study", help="run a named replication study")
    p.add_argument("name", choices=sorted(STUDIES))
    p.add_argument("--scale", choices=list(SCALES), default="desk")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--backend", choices=("serial", "thread", "process"), default=None)
    p.add_argument("--out", default=None, help="output directory (default: study-<name>)")
    return parser


def _pool(workers, backend=None) -> WorkPool:
    n = default_workers() if workers is None else workers
    if n < 1:
        raise ConfigError("workers must be >= 1", key="workers")
    return WorkPool(n, backend if n > 1 else "serial")


def _theta(model, pairs) -> dict:
    theta = dict(DEFAULT_THETA.get(model.label, {}))
    for k, v in pairs:
        if k not in model.param_names:
            raise ConfigError(f"unknown parameter {k!r} for {model.label}", key=f"theta.{k}")
        theta[k] = v
    missing = [n for n in model.param_names if n not in theta]
    if missing:
        raise ConfigError(f"no value for {missing[0]!r}", key=f"theta.{missing[0]}")
    if not math.isfinite(model.default_prior().logpdf(theta)):
        raise ConfigError("parameter values lie outside the model's support", key="theta")
    return theta


def _model(args):
    return make_model(args.model, **dict(args.model_option))


def cmd_simulate(args) -> int:
    model = _model(args)
    theta = _theta(model, args.theta)
    data = simulate_data(model, theta, args.T, RandomStream(args.seed, _SIMULATE, 0))
    if args.out:
        write_dataset(data, args.out)
    else:
        sys.stdout.write(dataset_csv(data))
    return EXIT_OK


def cmd_filter(args) -> int:
    model = _model(args)
    theta = _theta(model, args.theta)
    data = load_dataset(args.data)
    variants, Ms = list(args.variant), list(args.M)
    if len(Ms) == 1:
        Ms = Ms * len(variants)
    if len(variants) == 1 and len(Ms) > 1:
        variants = variants * len(Ms)
    if len(Ms) != len(variants):
        raise ConfigError("give one M or one per variant", key="M")
    if any(m < 1 for v, m in zip(variants, Ms) if v != "kalman"):
        raise ConfigError("M must be >= 1", key="M")
    if "kalman" in variants and model.label != "ar1":
        raise UnsupportedVariant("the exact likelihood is available only for ar1")
    with _pool(args.workers) as pool:
        report = loglik_sd_study(model, theta, [data], list(zip(variants, Ms)), args.reps, args.seed,
                                 pool=pool, epsilon=args.epsilon)
    rows = [{"variant": c.variant, "M": c.M, "median_loglik": float(c.medians[0]), "sd_loglik": float(c.sds[0])}
            for c in report.cells]
    out = {
        "model": model.label,
        "theta": theta,
        "data": str(args.data),
        "T": data.T,
        "reps": args.reps,
        "seed": args.seed,
        "epsilon": args.epsilon,
        "cells": rows,
    }
    if model.label == "ar1":
        out["exact_loglik"] = kalman_loglik(theta, data)
    sys.stdout.write(table_csv(rows))
    if args.out:
        write_json(out, args.out)
    return EXIT_OK


def _run_config(args) -> RunConfig:
    try:
        base = read_json(args.config) if args.config else {}
    except ValueError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}", key="config") from None
    if not isinstance(base, dict):
        raise ConfigError("config file must hold a JSON object", key="config")
    over = {k: v for k, v in vars(args).items()
            if k in RunConfig.__dataclass_fields__ and v is not None}
    for k in ("theta", "fixed"):
        if k in over:
            over[k] = {**base.get(k, {}), **dict(over[k])}
    if args.model_option is not None:
        over["model_options"] = {**base.get("model_options", {}), **dict(args.model_option)}
    merged = {**base, **over}
    for k in merged:
        if k not in RunConfig.__dataclass_fields__:
            raise ConfigError(f"unknown config key {k!r}", key=k)
    if merged.get("data") is None:
        raise ConfigError("a dataset is required (--data or 'data' in the config)", key="data")
    return RunConfig.from_dict(merged)


def cmd_sample(args) -> int:
    cfg = _run_config(args)
    data = load_dataset(cfg.data)
    target = cfg.build_target(data)
    scfg = cfg.sampler_config()
    workers = cfg.workers if cfg.mode != "SP" else 1
    pool = WorkPool(workers, args.backend if workers > 1 else "serial")
    with pool:
        rec = run_chain(target, scfg, cfg.seed, init=None, pool=pool)
    out = Path(cfg.output)
    path = out / "chain.csv"
    write_chain(rec, path, extra={"run_config": cfg.to_dict(), "target": target.describe()})
    acc = rec.acceptance_rate(cfg.burn_in)
    print(f"wrote {path}: {rec.n} iterations, acceptance {acc:.1f}%, {rec.elapsed:.1f}s")
    return EXIT_OK


def _chain_context(chain_path):
    rec = load_chain(chain_path)
    side = read_json(Path(chain_path).with_suffix(".json"))
    run = side.get("run_config")
    if run is None:
        raise ConfigError("chain sidecar has no run_config; was it written by 'sample'?", key="run_config")
    return rec, RunConfig.from_dict(run)


def cmd_evidence(args) -> int:
    rec, cfg = _chain_context(args.chain)
    data = load_dataset(cfg.data)
    target = cfg.build_target(data)
    burn = cfg.burn_in if args.burn_in is None else args.burn_in
    with _pool(args.workers) as pool:
        res = evidence_from_chain(target, rec, args.seed, burn_in=burn, thin=args.thin, K=args.K, pool=pool)
    out = res.to_dict()
    out.update({"chain": str(args.chain), "burn_in": burn, "thin": args.thin, "run_config": cfg.to_dict()})
    path = Path(args.out) if args.out else Path(args.chain).with_name("evidence.json")
    write_json(out, path)
    print(f"log BS {res.log_BS:.4f} (se {res.se_BS:.4f}), log IS {res.log_IS:.4f}; wrote {path}")
    return EXIT_OK


def cmd_diag(args) -> int:
    rec = load_chain(args.chain)
    burn = args.burn_in
    if burn is None:
        burn = int(rec.config.get("sampler", {}).get("burn_in", 0))
    t = rec.time_per_iteration
    rows = chain_summary(rec, burn, t_per_iter=t if math.isfinite(t) and t > 0 else math.inf, coords=args.coords)
    if args.out:
        write_table(rows, args.out)
    sys.stdout.write(table_csv(rows))
    return EXIT_OK


def cmd_study(args) -> int:
    out = args.out or f"study-{args.name}"
    start = time.perf_counter()
    with _pool(args.workers, args.backend) as pool:
        files = run_study(args.name, args.scale, args.seed, out, pool=pool)
    print(json.dumps(files, indent=2, sort_keys=True))
    print(f"{args.name} ({args.scale}) finished in {time.perf_counter() - start:.1f}s", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "sample": cmd_sample,
    "evidence": cmd_evidence,
    "diag": cmd_diag,
    "study": cmd_study,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except _CONFIG_ERRORS as exc:
        key = getattr(exc, "key", None)
        where = f" [{key}]" if key else ""
        print(f"pfmcmc: configuration error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PfmcmcError, OSError, ValueError, FloatingPointError) as exc:
        print(f"pfmcmc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
