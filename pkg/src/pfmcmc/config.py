"""Run configuration: one serialisable object describing a sampling run."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping

from .errors import ConfigError
from .likelihood import FilterConfig, Target
from .models import DEFAULT_THETA, Dataset, make_model
from .params import HalfNormal, InverseGamma, Normal, Prior, TruncatedNormal, Uniform
from .proposals import AimhSchedule
from .samplers import SamplerConfig

__all__ = ["PRIOR_FAMILIES", "parse_prior", "RunConfig"]

PRIOR_FAMILIES = {
    "normal": (Normal, 2),
    "uniform": (Uniform, 2),
    "invgamma": (InverseGamma, 2),
    "halfnormal": (HalfNormal, 1),
    "truncnormal": (TruncatedNormal, 4),
}


def parse_prior(spec: Mapping, base: Prior) -> Prior:
    """Replace marginals of ``base`` from ``{name: [family, *args]}``.

    Families: ``normal(mean, var)``, ``uniform(low, high)``,
    ``invgamma(shape, scale)``, ``halfnormal(var)`` and
    ``truncnormal(loc, scale, low, high)``. Joint constraints are kept.
    """
    marg = dict(base.marginals)
    for name, entry in spec.items():
        if name not in marg:
            raise ConfigError(f"prior given for unknown parameter {name!r}", key=f"prior.{name}")
        if not isinstance(entry, (list, tuple)) or not entry:
            raise ConfigError("prior entries look like [family, arg, ...]", key=f"prior.{name}")
        family, *args = entry
        if family not in PRIOR_FAMILIES:
            raise ConfigError(f"unknown prior family {family!r}", key=f"prior.{name}")
        cls, nargs = PRIOR_FAMILIES[family]
        if len(args) != nargs:
            raise ConfigError(f"{family} takes {nargs} arguments", key=f"prior.{name}")
        marg[name] = cls(*(float(a) for a in args))
    return Prior(marg, base.constraints, base.joint_log_norm)


@dataclass
class RunConfig:
    """Everything needed to reproduce a sampling run.

    ``theta`` gives the parameter values for simulation and filtering
    (defaults per model); ``fixed`` holds parameters kept constant while
    sampling; ``prior`` overrides marginals by name.
    """

    model: str = "ar1"
    model_options: dict = field(default_factory=dict)
    data: str | None = None
    theta: dict = field(default_factory=dict)
    fixed: dict = field(default_factory=dict)
    prior: dict = field(default_factory=dict)
    variant: str = "fapf"
    particles: int = 100
    epsilon: float = 0.05
    sampler: str = "aimh"
    n_iter: int = 5000
    burn_in: int = 0
    warmup: int = 1000
    checkpoints: list = field(default_factory=lambda: list(AimhSchedule().checkpoints))
    stage2_at: int | None = 2000
    mode: str = "SP"
    workers: int = 1
    block: int = 8
    seed: int = 1
    output: str = "out"

    def __post_init__(self):
        # validate eagerly so errors name the key before any work starts
        self.build_model()
        self.filter_config()
        self.sampler_config()

    # -- construction ---------------------------------------------------------
    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}", key=k)
        return cls(**dict(d))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def build_model(self):
        return make_model(self.model, **self.model_options)

    def resolved_theta(self) -> dict:
        model = self.build_model()
        base = dict(DEFAULT_THETA.get(model.label, {}))
        base.update(self.theta)
        unknown = [k for k in base if k not in model.param_names]
        if unknown:
            raise ConfigError(f"unknown parameter {unknown[0]!r}", key=f"theta.{unknown[0]}")
        return base

    def filter_config(self) -> FilterConfig:
        workers = self.workers if self.mode.upper() == "MP2" else 1
        return FilterConfig(self.variant, int(self.particles), float(self.epsilon), workers)

    def sampler_config(self) -> SamplerConfig:
        schedule = AimhSchedule(checkpoints=tuple(self.checkpoints), stage2_at=self.stage2_at)
        return SamplerConfig(
            sampler=self.sampler, n_iter=int(self.n_iter), burn_in=int(self.burn_in), mode=self.mode,
            workers=int(self.workers), block=int(self.block), schedule=schedule, warmup=int(self.warmup),
        )

    def build_target(self, data: Dataset) -> Target:
        model = self.build_model()
        prior = parse_prior(self.prior, model.default_prior()) if self.prior else None
        return Target(model, data, self.filter_config(), fixed=self.fixed, prior=prior)
