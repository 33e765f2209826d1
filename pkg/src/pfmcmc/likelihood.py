"""Likelihood configuration and the posterior target in unconstrained coordinates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError
from .filters import VARIANTS, kalman_loglik
from .models import Dataset, StateSpaceModel
from .params import ParameterVector, Prior, from_unconstrained, to_unconstrained
from .rng import RandomStream

__all__ = [
    "PF",
    "PROPOSAL",
    "ACCEPT",
    "FIT",
    "WARMUP",
    "EVIDENCE",
    "FilterConfig",
    "Evaluation",
    "Target",
    "pf_stream",
    "evaluate_point",
    "PointEvaluator",
]

# Stream purposes. A stream path is (purpose, chain id, index).
PF, PROPOSAL, ACCEPT, FIT, WARMUP, EVIDENCE = 1, 2, 3, 4, 5, 6


@dataclass(frozen=True)
class FilterConfig:
    """How the likelihood is computed.

    ``variant`` is a filter variant or ``"kalman"`` for the exact AR(1)
    likelihood. ``workers`` > 1 averages that many independent runs of
    ``particles`` particles each in the likelihood domain.
    """

    variant: str = "fapf"
    particles: int = 100
    epsilon: float = 0.05
    workers: int = 1
    papf_method: str = "newton"
    papf_max_iter: int = 50
    papf_fixed_steps: int | None = None

    def __post_init__(self):
        v = self.variant.lower().replace("ε", "eps")
        object.__setattr__(self, "variant", v)
        if v != "kalman" and v not in VARIANTS:
            raise ConfigError(f"unknown filter variant {self.variant!r}", key="variant")
        if self.particles < 1:
            raise ConfigError("particles must be >= 1", key="particles")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", key="workers")
        if v == "papf-eps" and not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)", key="epsilon")

    @property
    def papf_options(self) -> dict:
        return {"method": self.papf_method, "max_iter": self.papf_max_iter, "fixed_steps": self.papf_fixed_steps}

    def to_dict(self) -> dict:
        return asdict(self)


class Evaluation(NamedTuple):
    log_target: float
    loglik: float
    log_prior: float
    log_jacobian: float


def pf_stream(seed: int, chain: int, pf_seed: int) -> RandomStream:
    """The stream that regenerates the filter's auxiliary randomness."""
    return RandomStream(seed, PF, chain, pf_seed)


@dataclass
class Target:
    """Posterior over the free parameters, in unconstrained coordinates.

    ``log_target(z) = log p_S(y | theta(z)) + log p(theta(z)) + log|J(z)|``
    where ``p_S`` is the simulated (or exact) likelihood.
    """

    model: StateSpaceModel
    data: Dataset
    filter: FilterConfig = field(default_factory=FilterConfig)
    free: Sequence[str] | None = None
    fixed: Mapping[str, float] = field(default_factory=dict)
    prior: Prior | None = None
    pool: object = field(default=None, repr=False, compare=False)

    def __getstate__(self):
        # worker pools never travel to workers
        state = dict(self.__dict__)
        state["pool"] = None
        return state

    def __post_init__(self):
        names = self.model.param_names
        self.fixed = {k: float(v) for k, v in self.fixed.items()}
        unknown = [n for n in self.fixed if n not in names]
        if unknown:
            raise ConfigError(f"unknown parameter {unknown[0]!r} for model {self.model.name}", key=unknown[0])
        self.free = tuple(self.free) if self.free is not None else tuple(n for n in names if n not in self.fixed)
        bad = [n for n in self.free if n not in names or n in self.fixed]
        if bad:
            raise ConfigError(f"parameter {bad[0]!r} cannot be estimated", key=bad[0])
        missing = [n for n in names if n not in self.free and n not in self.fixed]
        if missing:
            raise ConfigError(f"parameter {missing[0]!r} is neither free nor fixed", key=missing[0])
        if not self.free:
            raise ConfigError("no free parameters", key="free")
        full = self.prior if self.prior is not None else self.model.default_prior()
        self.prior = full.restrict(self.free)
        if self.filter.variant == "kalman" and self.model.name != "ar1":
            raise ConfigError("the exact likelihood exists only for the ar1 model", key="variant")
        if self.filter.variant == "fapf" and not self.model.fully_adaptable:
            raise ConfigError(f"model {self.model.name} has no fully adapted filter", key="variant")
        self.model.validate(self.data)

    @property
    def dim(self) -> int:
        return len(self.free)

    @property
    def kinds(self) -> dict:
        return self.model.transforms

    def point(self, z) -> ParameterVector:
        return from_unconstrained(self.free, z, self.kinds)

    def to_z(self, natural) -> np.ndarray:
        if isinstance(natural, Mapping):
            natural = [natural[n] for n in self.free]
        return to_unconstrained(self.free, natural, self.kinds).unconstrained

    def theta(self, point: ParameterVector) -> dict:
        return {**self.fixed, **point.as_dict()}

    def loglik(self, theta: Mapping, rs: RandomStream) -> float:
        cfg = self.filter
        if cfg.variant == "kalman":
            return kalman_loglik(theta, self.data)
        from .parallel import mp2_loglik

        return mp2_loglik(
            self.model, theta, self.data, cfg.particles, cfg.workers, rs,
            variant=cfg.variant, epsilon=cfg.epsilon, pool=self.pool, **cfg.papf_options,
        )

    def log_prior_z(self, z) -> float:
        """Prior density of ``z`` (log prior plus log-Jacobian); no filter run."""
        try:
            pt = self.point(z)
        except OverflowError:
            return -math.inf
        lp = self.prior.logpdf(pt.as_dict(), self.fixed)
        return lp + pt.log_jacobian if lp > -math.inf else -math.inf

    def evaluate(self, z, rs: RandomStream) -> Evaluation:
        """Log-target at ``z``; the filter is skipped outside the prior support."""
        try:
            pt = self.point(z)
        except OverflowError:
            return Evaluation(-math.inf, -math.inf, -math.inf, 0.0)
        lp = self.prior.logpdf(pt.as_dict(), self.fixed)
        if lp == -math.inf:
            return Evaluation(-math.inf, -math.inf, lp, pt.log_jacobian)
        ll = self.loglik(self.theta(pt), rs)
        if not ll == ll:  # NaN from an overflowing filter run counts as zero likelihood
            ll = -math.inf
        return Evaluation(ll + lp + pt.log_jacobian, ll, lp, pt.log_jacobian)

    def describe(self) -> dict:
        return {
            "model": self.model.label,
            "free": list(self.free),
            "fixed": dict(self.fixed),
            "filter": self.filter.to_dict(),
            "T": self.data.T,
        }


def evaluate_point(target: Target, z, seed: int, chain: int, pf_seed: int) -> Evaluation:
    """Pure task for worker pools: log-target at ``z`` with a given pf-seed."""
    return target.evaluate(np.asarray(z, dtype=float), pf_stream(seed, chain, pf_seed))


@dataclass(frozen=True)
class PointEvaluator:
    """Picklable ``(z, pf_seed) -> Evaluation`` bound to a target, seed and chain."""

    target: Target
    seed: int
    chain: int = 0

    def __call__(self, z, pf_seed: int) -> Evaluation:
        return evaluate_point(self.target, z, self.seed, self.chain, pf_seed)
