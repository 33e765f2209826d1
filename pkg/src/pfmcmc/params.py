"""Parameter transforms to unconstrained space and prior distributions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import ConfigError, TransformError

__all__ = [
    "TRANSFORMS",
    "ParameterVector",
    "to_unconstrained",
    "from_unconstrained",
    "Normal",
    "Uniform",
    "InverseGamma",
    "HalfNormal",
    "TruncatedNormal",
    "SimplexConstraint",
    "simplex_constraint",
    "Prior",
    "log_prior",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _softplus(x):
    return np.logaddexp(0.0, x)


# Each transform maps natural -> unconstrained, back, and gives
# log|d natural / d unconstrained| as a function of the unconstrained value.
def _logit(p):
    if not 0.0 < p < 1.0:
        raise TransformError(f"value {p!r} is outside (0, 1)")
    return math.log(p) - math.log1p(-p)


def _expit(z):
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def _log(x):
    if not x > 0.0:
        raise TransformError(f"value {x!r} is not positive")
    return math.log(x)


def _atanh(r):
    if not -1.0 < r < 1.0:
        raise TransformError(f"value {r!r} is outside (-1, 1)")
    return math.atanh(r)


TRANSFORMS: dict[str, tuple[Callable, Callable, Callable]] = {
    "real": (float, float, lambda z: 0.0),
    "positive": (_log, math.exp, lambda z: z),
    "unit": (_logit, _expit, lambda z: -float(_softplus(z) + _softplus(-z))),
    # Fisher z; d tanh(z)/dz = 1 - tanh(z)^2 = 4 e^{-2|z|} / (1 + e^{-2|z|})^2
    "corr": (_atanh, math.tanh, lambda z: math.log(4.0) - 2.0 * abs(z) - 2.0 * float(_softplus(-2.0 * abs(z)))),
}


@dataclass(frozen=True)
class ParameterVector:
    """A parameter point in both coordinate systems.

    ``log_jacobian`` is ``log|det d(natural)/d(unconstrained)|``.
    """

    names: tuple
    natural: np.ndarray
    unconstrained: np.ndarray
    log_jacobian: float

    def as_dict(self) -> dict:
        return dict(zip(self.names, (float(v) for v in self.natural)))


def _kinds(names, kinds):
    try:
        return [kinds[n] for n in names]
    except KeyError as exc:
        raise ConfigError(f"no transform for parameter {exc.args[0]!r}", key=exc.args[0]) from None


def to_unconstrained(names: Sequence[str], natural, kinds: Mapping[str, str]) -> ParameterVector:
    """Map natural values to unconstrained coordinates."""
    natural = np.asarray(natural, dtype=float)
    z = np.array([TRANSFORMS[k][0](float(v)) for k, v in zip(_kinds(names, kinds), natural)])
    return from_unconstrained(names, z, kinds)


def from_unconstrained(names: Sequence[str], z, kinds: Mapping[str, str]) -> ParameterVector:
    """Map unconstrained values back, accumulating the log-Jacobian."""
    z = np.asarray(z, dtype=float)
    ks = _kinds(names, kinds)
    natural = np.array([TRANSFORMS[k][1](float(v)) for k, v in zip(ks, z)])
    logj = sum(TRANSFORMS[k][2](float(v)) for k, v in zip(ks, z))
    return ParameterVector(tuple(names), natural, z.copy(), float(logj))


# --------------------------------------------------------------------------
# Marginal priors. Each exposes logpdf (natural coordinates) and sample.


@dataclass(frozen=True)
class Normal:
    """Normal with mean ``mean`` and variance ``var``."""

    mean: float
    var: float

    def logpdf(self, x):
        return -0.5 * (_LOG_2PI + math.log(self.var) + (x - self.mean) ** 2 / self.var)

    def sample(self, rs, n):
        return self.mean + math.sqrt(self.var) * rs.normal(n)


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def logpdf(self, x):
        if self.low < x < self.high:
            return -math.log(self.high - self.low)
        return -math.inf

    def sample(self, rs, n):
        return self.low + (self.high - self.low) * rs.uniform(n)


@dataclass(frozen=True)
class InverseGamma:
    """Inverse gamma with shape ``shape`` and scale ``scale``."""

    shape: float
    scale: float

    def logpdf(self, x):
        if not x > 0:
            return -math.inf
        a, b = self.shape, self.scale
        return a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(x) - b / x

    def sample(self, rs, n):
        return self.scale / rs.generator.gamma(self.shape, 1.0, n)


@dataclass(frozen=True)
class HalfNormal:
    """Half-normal on [0, inf) whose parent normal has variance ``var``."""

    var: float

    def logpdf(self, x):
        if x < 0:
            return -math.inf
        return math.log(2.0) - 0.5 * (_LOG_2PI + math.log(self.var)) - 0.5 * x * x / self.var

    def sample(self, rs, n):
        return np.abs(math.sqrt(self.var) * rs.normal(n))


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal with location ``loc`` and scale (sd) ``scale`` restricted to (low, high)."""

    loc: float
    scale: float
    low: float
    high: float

    @property
    def _bounds(self):
        return (self.low - self.loc) / self.scale, (self.high - self.loc) / self.scale

    @property
    def _log_mass(self):
        a, b = self._bounds
        # log(Phi(b) - Phi(a)) without cancellation when both tails are far
        if a > 0:
            return float(log_ndtr(-a) + np.log1p(-np.exp(log_ndtr(-b) - log_ndtr(-a))))
        return float(log_ndtr(b) + np.log1p(-np.exp(log_ndtr(a) - log_ndtr(b))))

    def logpdf(self, x):
        if not self.low < x < self.high:
            return -math.inf
        s = (x - self.loc) / self.scale
        return -0.5 * (_LOG_2PI + s * s) - math.log(self.scale) - self._log_mass

    def sample(self, rs, n):
        a, b = self._bounds
        lo, hi = ndtr(a), ndtr(b)
        u = lo + (hi - lo) * rs.uniform(n)
        x = self.loc + self.scale * ndtri(u)
        return np.clip(x, np.nextafter(self.low, self.high), np.nextafter(self.high, self.low))


@dataclass(frozen=True)
class SimplexConstraint:
    """Joint constraint: each named parameter positive and their sum below 1."""

    names: tuple

    def __call__(self, values: Mapping[str, float]) -> bool:
        vals = [values[n] for n in self.names]
        return all(v > 0 for v in vals) and sum(vals) < 1.0


def simplex_constraint(*names) -> SimplexConstraint:
    return SimplexConstraint(tuple(names))


@dataclass(frozen=True)
class Prior:
    """Independent marginals plus joint support constraints.

    A joint constraint is a predicate over the parameter dict; when it fails
    the log-density is ``-inf``. ``joint_log_norm`` adds a constant that
    renormalizes the product of marginals on the constrained region (e.g.
    ``log 2`` for the uniform on the 2-simplex).
    """

    marginals: Mapping[str, object]
    constraints: tuple = ()
    joint_log_norm: float = 0.0
    names: tuple = field(default=())

    def __post_init__(self):
        if not self.names:
            object.__setattr__(self, "names", tuple(self.marginals))

    def restrict(self, free: Sequence[str]) -> "Prior":
        """Prior over ``free`` only. Constraints touching fixed names are kept
        and evaluated with the fixed values supplied at call time."""
        missing = [n for n in free if n not in self.marginals]
        if missing:
            raise ConfigError(f"no prior for parameter {missing[0]!r}", key=missing[0])
        return Prior({n: self.marginals[n] for n in free}, self.constraints, self.joint_log_norm, tuple(free))

    def logpdf(self, values: Mapping[str, float], fixed: Mapping[str, float] | None = None) -> float:
        total = self.joint_log_norm
        for name in self.names:
            lp = self.marginals[name].logpdf(values[name])
            if lp == -math.inf:
                return -math.inf
            total += lp
        if self.constraints:
            merged = {**(fixed or {}), **values}
            for c in self.constraints:
                if not c(merged):
                    return -math.inf
        return total

    def sample(self, rs, n: int, fixed: Mapping[str, float] | None = None, max_tries: int = 100):
        """Draw ``n`` points (rows ordered as ``names``) by rejection on the constraints."""
        out = np.empty((0, len(self.names)))
        for _ in range(max_tries):
            draws = np.column_stack([np.asarray(self.marginals[k].sample(rs, n), dtype=float) for k in self.names])
            keep = [all(c({**(fixed or {}), **dict(zip(self.names, row))}) for c in self.constraints) for row in draws]
            out = np.vstack([out, draws[np.asarray(keep, dtype=bool)]])
            if out.shape[0] >= n:
                return out[:n]
        raise ConfigError("prior constraints reject almost every draw")


def log_prior(prior: Prior, theta, fixed: Mapping[str, float] | None = None) -> float:
    """Log prior density at ``theta`` (a ParameterVector, mapping or sequence)."""
    if isinstance(theta, ParameterVector):
        values = theta.as_dict()
    elif isinstance(theta, Mapping):
        values = dict(theta)
    else:
        seq = list(np.atleast_1d(np.asarray(theta, dtype=float)))
        if len(seq) != len(prior.names):
            raise ConfigError(f"expected {len(prior.names)} parameters, got {len(seq)}")
        values = dict(zip(prior.names, seq))
    if set(prior.names) - set(values):
        missing = sorted(set(prior.names) - set(values))[0]
        raise ConfigError(f"parameter {missing!r} missing", key=missing)
    return prior.logpdf(values, fixed)
