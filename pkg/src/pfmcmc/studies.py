"""Named simulation studies: log-likelihood SD tables, sampler tables and evidence.

Each study simulates its datasets from a fixed parameter point, then runs
some of:

* an SD study of the simulated log-likelihood at the true parameters;
* adaptive PMMH chains, summarised by acceptance rate and inefficiency;
* bridge and importance-sampling evidence for competing models.

Output files depend only on the study, scale and seed. Wall-clock timings
(and so equivalent computing times) vary between runs, so they are logged
rather than written.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import acceptance_rate, ect, inefficiency, loglik_sd_study
from .errors import ConfigError
from .evidence import evidence_from_chain
from .io import write_dataset, write_json, write_table
from .likelihood import FilterConfig, Target
from .models import DEFAULT_THETA, make_model, simulate_data
from .parallel import WorkPool
from .rng import RandomStream
from .samplers import SamplerConfig, arwm_warmup, run_chain

__all__ = ["Scale", "SCALES", "McmcCell", "Study", "STUDIES", "run_study"]

log = logging.getLogger("pfmcmc")

_STUDY_DATA = 8


@dataclass(frozen=True)
class Scale:
    """Study size: series length, datasets, filter replicates and chain lengths."""

    name: str
    T: int
    datasets: int
    reps: int
    n_iter: int
    burn_in: int
    warmup: int
    chains: int


SCALES = {
    "smoke": Scale("smoke", T=50, datasets=2, reps=10, n_iter=300, burn_in=100, warmup=200, chains=1),
    "desk": Scale("desk", T=200, datasets=10, reps=200, n_iter=5000, burn_in=2500, warmup=1000, chains=3),
    "paper": Scale("paper", T=500, datasets=50, reps=1000, n_iter=30000, burn_in=20000, warmup=5000, chains=50),
}


@dataclass(frozen=True)
class McmcCell:
    sampler: str
    mode: str
    variant: str
    particles: int
    workers: int = 1

    @property
    def label(self) -> str:
        return f"{self.sampler.upper()}-{self.mode}"


@dataclass(frozen=True)
class Study:
    """A named replication.

    ``single_dataset`` studies analyse one series and replicate the chains
    on it; the others run one chain per dataset on the first
    ``scale.chains`` datasets.
    """

    name: str
    model: str
    description: str
    model_options: dict = field(default_factory=dict)
    theta: dict | None = None
    sd_cells: tuple = ()
    mcmc_cells: tuple = ()
    warm: tuple = ("fapf", 100)
    single_dataset: bool = False
    coords: str = "natural"
    evidence_models: tuple = ()
    evidence_filters: tuple = ()

    def true_theta(self) -> dict:
        return dict(self.theta) if self.theta is not None else dict(DEFAULT_THETA[self.model])


def _ar1(s2):
    return {"mu": 0.0, "phi": 0.6, "tau2": 1.0, "sigma2": s2}


STUDIES = {
    s.name: s
    for s in [
        Study(
            "ar1-high-snr", "ar1", "AR(1) plus noise with sigma2 = 0.01",
            theta=_ar1(0.01),
            sd_cells=(("sir", 100), ("sir", 500), ("sir", 1000), ("sir", 2000), ("fapf", 100)),
            mcmc_cells=(McmcCell("aimh", "SP", "kalman", 0), McmcCell("aimh", "SP", "sir", 1000),
                        McmcCell("aimh", "SP", "fapf", 100)),
            warm=("kalman", 0),
        ),
        Study(
            "ar1-low-snr", "ar1", "AR(1) plus noise with sigma2 = 1",
            theta=_ar1(1.0),
            sd_cells=(("sir", 100), ("sir", 500), ("sir", 1000), ("fapf", 100)),
            mcmc_cells=(McmcCell("aimh", "SP", "kalman", 0), McmcCell("aimh", "SP", "sir", 500),
                        McmcCell("aimh", "SP", "fapf", 100)),
            warm=("kalman", 0),
        ),
        Study(
            "binomial-m500", "binomial", "binomial counts with 500 trials",
            model_options={"trials": 500},
            sd_cells=(("sir", 500), ("sir", 1000), ("sir", 2000), ("sir", 4000), ("papf", 100)),
            mcmc_cells=(McmcCell("aimh", "SP", "sir", 1000), McmcCell("aimh", "SP", "papf", 100)),
            warm=("papf", 100),
        ),
        Study(
            "binomial-m100", "binomial", "binomial counts with 100 trials",
            model_options={"trials": 100},
            sd_cells=(("sir", 500), ("sir", 1000), ("sir", 2000), ("sir", 4000),
                      ("papf", 100), ("papf", 200), ("papf", 500)),
            mcmc_cells=(McmcCell("aimh", "SP", "sir", 500), McmcCell("aimh", "SP", "papf", 100)),
            warm=("papf", 100),
        ),
        Study(
            "garch-uk-style", "garch", "GARCH(1,1) plus noise at weekly-return scale",
            sd_cells=(("sir", 1000), ("sir", 5000), ("sir", 10000), ("fapf", 200), ("fapf", 500)),
            mcmc_cells=(McmcCell("arwm", "SP", "sir", 1000), McmcCell("aimh", "SP", "sir", 1000),
                        McmcCell("arwm", "SP", "fapf", 200), McmcCell("aimh", "SP", "fapf", 200)),
            warm=("fapf", 500),
            single_dataset=True,
        ),
        Study(
            "sv-model-choice", "sv-lev", "evidence for four volatility models on leverage data",
            single_dataset=True,
            evidence_models=("sv", "sv-lev", "sv-out", "sv-lev-out"),
            evidence_filters=(("sir", 500), ("papf", 100)),
            warm=("papf", 100),
        ),
        Study(
            "samplers", "sv", "ARWM and AIMH under serial and parallel schemes",
            mcmc_cells=(McmcCell("arwm", "SP", "sir", 400), McmcCell("arwm", "MP2", "sir", 100, 4),
                        McmcCell("aimh", "SP", "sir", 400), McmcCell("aimh", "MP1", "sir", 400, 4),
                        McmcCell("aimh", "MP2", "sir", 100, 4)),
            warm=("papf", 100),
            single_dataset=True,
            coords="unconstrained",
        ),
    ]
}


def _median_iqr(values):
    v = np.asarray(values, dtype=float)
    q25, q50, q75 = np.percentile(v, [25, 50, 75])
    return float(q50), float(q75 - q25)


def _target(model, data, variant, M):
    return Target(model, data, FilterConfig(variant, max(int(M), 1)))


def _warm_start(study, model, data, scale, seed, chain):
    warm_target = _target(model, data, *study.warm)
    g1, z, elapsed = arwm_warmup(warm_target, scale.warmup, seed, chain)
    log.info("  warm-up (%s %s): %.1fs", study.warm[0], study.warm[1], elapsed)
    return g1, z


def _mcmc_table(study, model, datasets, scale, seed, pool):
    n_chains = scale.chains if study.single_dataset else min(scale.chains, len(datasets))
    names = None
    per_cell = {i: [] for i in range(len(study.mcmc_cells))}
    for c in range(n_chains):
        data = datasets[0] if study.single_dataset else datasets[c]
        g1, z0 = _warm_start(study, model, data, scale, seed, c)
        cov = g1.covs[0]
        for i, cell in enumerate(study.mcmc_cells):
            target = _target(model, data, cell.variant, cell.particles)
            cfg = SamplerConfig(
                cell.sampler, n_iter=scale.n_iter, burn_in=scale.burn_in, mode=cell.mode,
                workers=cell.workers, warmup=scale.warmup, sigma1=tuple(map(tuple, cov)),
            )
            rec = run_chain(target, cfg, seed, chain=c * 100 + i, init=z0,
                            init_mixture=g1 if cell.sampler == "aimh" else None, pool=pool)
            names = rec.names
            draws = (rec.natural if study.coords == "natural" else rec.z)[scale.burn_in:]
            ifs = [inefficiency(draws[:, k]) for k in range(draws.shape[1])]
            acc = acceptance_rate(rec, scale.burn_in)
            t = rec.time_per_iteration
            per_cell[i].append((acc, ifs))
            log.info(
                "  chain %d %s %s M=%d: acc %.1f%%, IF %s, %.4fs/iter, ECT %s",
                c, cell.label, cell.variant, cell.particles, acc,
                " ".join(f"{v:.2f}" for v in ifs), t,
                " ".join(f"{ect(v, t):.1f}" if math.isfinite(v) else "inf" for v in ifs),
            )
    rows = []
    for i, cell in enumerate(study.mcmc_cells):
        accs = [a for a, _ in per_cell[i]]
        ifs = np.array([f for _, f in per_cell[i]])
        row = {"sampler": cell.sampler, "mode": cell.mode, "variant": cell.variant, "M": cell.particles,
               "J": cell.workers, "chains": len(accs)}
        row["median_acceptance"], row["iqr_acceptance"] = _median_iqr(accs)
        for k, name in enumerate(names):
            row[f"median_IF_{name}"], row[f"iqr_IF_{name}"] = _median_iqr(ifs[:, k])
        rows.append(row)
    return rows


def _evidence_table(study, data, scale, seed, pool):
    rows = []
    for mi, model_id in enumerate(study.evidence_models):
        model = make_model(model_id)
        for fi, (variant, M) in enumerate(study.evidence_filters):
            chain = 1000 + mi * 10 + fi
            warm_target = _target(model, data, *study.warm)
            g1, z0, _ = arwm_warmup(warm_target, scale.warmup, seed, chain)
            target = _target(model, data, variant, M)
            cfg = SamplerConfig("aimh", n_iter=scale.n_iter, burn_in=scale.burn_in, warmup=scale.warmup)
            rec = run_chain(target, cfg, seed, chain=chain, init=z0, init_mixture=g1, pool=pool)
            ev = evidence_from_chain(target, rec, seed, burn_in=scale.burn_in, pool=pool)
            log.info("  %s %s M=%d: log BS %.2f, log IS %.2f", model_id, variant, M, ev.log_BS, ev.log_IS)
            rows.append({"model": model_id, "variant": variant, "M": M, "log_BS": ev.log_BS, "log_IS": ev.log_IS,
                         "se_BS": ev.se_BS, "K": ev.K, "J": ev.J,
                         "excluded": ev.exclusions["posterior"] + ev.exclusions["proposal"],
                         "acceptance": acceptance_rate(rec, scale.burn_in)})
    return rows


def run_study(name: str, scale: str | Scale = "desk", seed: int = 1, outdir=".", pool: WorkPool | None = None) -> dict:
    """Run a named study and write its tables under ``outdir``.

    Returns a mapping from table name to the path written.
    """
    if name not in STUDIES:
        raise ConfigError(f"unknown study {name!r}; choose from {', '.join(STUDIES)}", key="study")
    study = STUDIES[name]
    sc = scale if isinstance(scale, Scale) else SCALES.get(scale)
    if sc is None:
        raise ConfigError(f"unknown scale {scale!r}; choose from {', '.join(SCALES)}", key="scale")
    out = Path(outdir)
    pool = pool or WorkPool(1)
    model = make_model(study.model, **study.model_options)
    theta = study.true_theta()
    n_data = 1 if study.single_dataset else sc.datasets
    datasets = [simulate_data(model, theta, sc.T, RandomStream(seed, _STUDY_DATA, i)) for i in range(n_data)]
    files = {}
    for i, d in enumerate(datasets):
        p = out / "datasets" / f"data_{i:03d}.csv"
        write_dataset(d, p)
    files["datasets"] = str(out / "datasets")
    log.info("%s (%s scale): %d dataset(s) of length %d", name, sc.name, n_data, sc.T)

    if study.sd_cells:
        report = loglik_sd_study(model, theta, datasets, study.sd_cells, sc.reps, seed, pool=pool)
        p = out / "sd_table.csv"
        write_table(report.rows(), p)
        files["sd_table"] = str(p)
        for r in report.rows():
            log.info("  SD %s M=%d: median %.4f (IQR %.4f)", r["variant"], r["M"], r["median_sd"], r["iqr_sd"])
    if study.mcmc_cells:
        rows = _mcmc_table(study, model, datasets, sc, seed, pool)
        p = out / "mcmc_table.csv"
        write_table(rows, p)
        files["mcmc_table"] = str(p)
    if study.evidence_models:
        rows = _evidence_table(study, datasets[0], sc, seed, pool)
        p = out / "evidence_table.csv"
        write_table(rows, p)
        files["evidence_table"] = str(p)

    manifest = {
        "study": name,
        "description": study.description,
        "model": study.model,
        "model_options": study.model_options,
        "theta": theta,
        "scale": sc.__dict__,
        "seed": int(seed),
        "sd_cells": [list(c) for c in study.sd_cells],
        "mcmc_cells": [c.__dict__ for c in study.mcmc_cells],
        "warm_start": list(study.warm),
        "evidence_models": list(study.evidence_models),
        "evidence_filters": [list(f) for f in study.evidence_filters],
        "coords": study.coords,
        "files": {k: Path(v).name for k, v in files.items()},
    }
    write_json(manifest, out / "study.json")
    files["manifest"] = str(out / "study.json")
    return files
