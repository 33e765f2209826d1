"""Auxiliary particle filters and the simulated likelihood.

One ASIR step, given the swarm at time t and the next observation:

1. first-stage log weights ``log g(y|x_t^k) + log pi_t^k``, normalized;
2. stratified resampling by the first-stage weights;
3. propagation from ``g(x_{t+1} | x~_t^k; y)``;
4. second-stage weights ``p(y|x) p(x|x~) / (g(y|x~) g(x|x~; y))``.

The log-likelihood increment is ``log mean(w_{t+1}) + log sum(w_{t|t+1})``.
The exponentiated total is an unbiased estimate of the likelihood.

Adapters supply steps 1, 3 and 4. They are small classes bound to a model
and a parameter point; :func:`make_adapter` picks one by variant name.
Random numbers are consumed in a fixed order within a step (model draws,
resampling offsets, branch uniforms, proposal normals) so a run is fully
determined by its stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, TotalWeightZero, UnsupportedVariant
from .rng import WeightVector, normalize_log_weights, stratified_resample

__all__ = [
    "Swarm",
    "FilterOutput",
    "SIRAdapter",
    "FullyAdaptedAdapter",
    "PartiallyAdaptedAdapter",
    "EpsilonMixtureAdapter",
    "fapf_adapters",
    "papf_adapters",
    "epsilon_mixture_adapters",
    "make_adapter",
    "VARIANTS",
    "asir_step",
    "run_filter",
    "kalman_loglik",
]

_LOG_2PI = math.log(2.0 * math.pi)
VARIANTS = ("sir", "fapf", "papf", "papf-eps")


def _norm_logpdf(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


@dataclass
class Swarm:
    """Weighted particle set at time ``t``."""

    states: np.ndarray
    weights: WeightVector
    t: int = 0

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @classmethod
    def uniform(cls, states, t=0):
        return cls(states, normalize_log_weights(np.zeros(states.shape[0])), t)


@dataclass
class FilterOutput:
    """Result of a filter run.

    ``per_step`` holds ``log p^(y_t | y_1:t-1)``; it stops early at the
    first degenerate step, whose entry is ``-inf``.
    """

    per_step: np.ndarray
    loglik: float
    swarm: Swarm | None
    degenerate: bool = False
    fallbacks: int = 0


def _take(ctx, idx):
    return {k: v[idx] for k, v in ctx.items()}


class SIRAdapter:
    """Bootstrap filter: ``g(y|x) = 1`` and the transition as proposal."""

    exact = False

    def __init__(self, model, theta: Mapping):
        self.model = model
        self.theta = theta
        self.fallbacks = 0

    def first_stage(self, states, y, y_prev=None, rs=None):
        mean, var = self.model.transition_moments(states, self.theta, y_prev, rs)
        return np.zeros(states.shape[0]), {"mean": mean, "var": var}

    def draw(self, ctx, rs):
        return ctx["mean"] + np.sqrt(ctx["var"]) * rs.normal(ctx["mean"].shape[0])

    def propose(self, states, ctx, y, rs):
        x = self.draw(ctx, rs)
        return self.model.next_state(states, x, ctx["var"]), self.model.log_obs(y, x, self.theta)


class _GaussianProposalAdapter(SIRAdapter):
    """Shared step 3/4 for adapters proposing from ``N(prop_mean, prop_var)``."""

    def draw(self, ctx, rs):
        return ctx["prop_mean"] + np.sqrt(ctx["prop_var"]) * rs.normal(ctx["prop_mean"].shape[0])

    def log_step_weights(self, x, ctx, y):
        return (
            self.model.log_obs(y, x, self.theta)
            + _norm_logpdf(x, ctx["mean"], ctx["var"])
            - ctx["log_g"]
            - _norm_logpdf(x, ctx["prop_mean"], ctx["prop_var"])
        )

    def propose(self, states, ctx, y, rs):
        x = self.draw(ctx, rs)
        new = self.model.next_state(states, x, ctx["var"])
        return new, (None if self.exact else self.log_step_weights(x, ctx, y))


class FullyAdaptedAdapter(_GaussianProposalAdapter):
    """Exact predictive ``p(y|x_t)`` and posterior proposal ``p(x_{t+1}|x_t, y)``
    for a Gaussian observation ``y ~ N(x, s2)``. Step-4 weights are 1."""

    exact = True

    def first_stage(self, states, y, y_prev=None, rs=None):
        mean, var = self.model.transition_moments(states, self.theta, y_prev, rs)
        s2 = self.model.obs_variance(self.theta)
        total = var + s2
        gain = var / total
        ctx = {
            "mean": mean,
            "var": var,
            "prop_mean": mean + gain * (y - mean),
            "prop_var": var * s2 / total,
        }
        ctx["log_g"] = _norm_logpdf(y, mean, total)
        return ctx["log_g"], ctx


class PartiallyAdaptedAdapter(_GaussianProposalAdapter):
    """Laplace-style adapter around the mode of ``log p(y|x) + log p(x|x_t)``.

    Parameters
    ----------
    method : {"newton", "fixed-point"}
        Newton-Raphson with backtracking, or the iteration
        ``x <- mean + var * dlog p(y|x)/dx``.
    max_iter, tol :
        Stop once ``|dlambda/dx| < tol``; particles not converged after
        ``max_iter`` iterations fall back to the transition proposal (with
        ``log p(y | transition mean)`` as first-stage weight) and are
        counted in ``fallbacks``.
    fixed_steps : int, optional
        Take exactly this many iterations with no convergence test. The
        proposal is then centred at the last iterate.
    """

    def __init__(self, model, theta, method="newton", max_iter=50, tol=1e-8, fixed_steps=None):
        if not model.partially_adaptable:
            raise UnsupportedVariant(f"model {model.name} is not partially adaptable")
        if method not in ("newton", "fixed-point"):
            raise ConfigError(f"unknown mode solver {method!r}", key="mode_solver")
        super().__init__(model, theta)
        self.method = method
        self.max_iter = int(max_iter)
        self.tol = float(tol)
        self.fixed_steps = fixed_steps

    def _lam(self, y, x, mean, var):
        return self.model.log_obs(y, x, self.theta) + _norm_logpdf(x, mean, var)

    def _grad_hess(self, y, x, mean, var):
        d1, d2 = self.model.obs_derivatives(y, x, self.theta)
        return d1 - (x - mean) / var, d2 - 1.0 / var

    def find_mode(self, y, mean, var):
        """Return ``(mode, curvature_variance, ok)`` per particle."""
        x = np.array(self.model.newton_start(y, mean, self.theta), dtype=float, copy=True)
        n_iter = self.fixed_steps if self.fixed_steps is not None else self.max_iter
        lam = self._lam(y, x, mean, var)
        done = np.zeros(x.shape, dtype=bool)
        for _ in range(n_iter):
            g, h = self._grad_hess(y, x, mean, var)
            if self.fixed_steps is None:
                done = np.abs(g) < self.tol
                if done.all():
                    break
            if self.method == "fixed-point":
                d1, _ = self.model.obs_derivatives(y, x, self.theta)
                x = np.where(done, x, mean + var * d1)
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(h < 0, -g / h, 0.0)
            step = np.where(done | ~np.isfinite(step), 0.0, step)
            scale = np.ones_like(x)
            for _ in range(40):
                cand = x + scale * step
                lam_c = self._lam(y, cand, mean, var)
                worse = ~(lam_c >= lam - 1e-12 * np.abs(lam))
                if not worse.any():
                    break
                scale = np.where(worse, 0.5 * scale, scale)
            x = np.where(worse, x, cand)
            lam = np.where(worse, lam, lam_c)
        g, h = self._grad_hess(y, x, mean, var)
        ok = np.isfinite(x) & (h < 0)
        if self.fixed_steps is None:
            ok &= np.abs(g) < self.tol
        with np.errstate(divide="ignore", invalid="ignore"):
            curv = np.where(ok, -1.0 / h, np.nan)
        return x, curv, ok

    def first_stage(self, states, y, y_prev=None, rs=None):
        mean, var = self.model.transition_moments(states, self.theta, y_prev, rs)
        mode, curv, ok = self.find_mode(y, mean, var)
        n_fail = int((~ok).sum())
        self.fallbacks += n_fail
        if n_fail:
            mode = np.where(ok, mode, mean)
            curv = np.where(ok, curv, var)
        log_g = np.where(
            ok,
            self._lam(y, mode, mean, var) + 0.5 * (_LOG_2PI + np.log(curv)),
            self.model.log_obs(y, mean, self.theta),
        )
        return log_g, {"mean": mean, "var": var, "prop_mean": mode, "prop_var": curv, "log_g": log_g}


class EpsilonMixtureAdapter(SIRAdapter):
    """Mixture of the transition (probability ``epsilon``) and a Gaussian-proposal
    adapter ``base``. The joint proposal is
    ``eps p(x'|x) + (1 - eps) g0(y|x) g0(x'|x, y)`` so second-stage weights
    never exceed ``sup p(y|x) / eps``."""

    def __init__(self, base: _GaussianProposalAdapter, epsilon: float):
        if not 0.0 < epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon!r}", key="epsilon")
        self.model = base.model
        self.theta = base.theta
        self.base = base
        self.epsilon = float(epsilon)

    @property
    def fallbacks(self):
        return self.base.fallbacks

    def first_stage(self, states, y, y_prev=None, rs=None):
        log_g0, ctx = self.base.first_stage(states, y, y_prev, rs)
        log_g = np.logaddexp(math.log(self.epsilon), math.log1p(-self.epsilon) + log_g0)
        ctx = dict(ctx, log_g0=log_g0, log_g=log_g)
        return log_g, ctx

    def log_joint_proposal(self, x, ctx):
        return np.logaddexp(
            math.log(self.epsilon) + _norm_logpdf(x, ctx["mean"], ctx["var"]),
            math.log1p(-self.epsilon) + ctx["log_g0"] + _norm_logpdf(x, ctx["prop_mean"], ctx["prop_var"]),
        )

    def propose(self, states, ctx, y, rs):
        n = ctx["mean"].shape[0]
        transition_branch = rs.uniform(n) < np.exp(math.log(self.epsilon) - ctx["log_g"])
        z = rs.normal(n)
        x = np.where(
            transition_branch,
            ctx["mean"] + np.sqrt(ctx["var"]) * z,
            ctx["prop_mean"] + np.sqrt(ctx["prop_var"]) * z,
        )
        log_w = self.model.log_obs(y, x, self.theta) + _norm_logpdf(x, ctx["mean"], ctx["var"]) - self.log_joint_proposal(x, ctx)
        return self.model.next_state(states, x, ctx["var"]), log_w


def fapf_adapters(model, theta) -> FullyAdaptedAdapter:
    if not model.fully_adaptable:
        raise UnsupportedVariant(f"model {model.name} is not fully adaptable")
    return FullyAdaptedAdapter(model, theta)


def papf_adapters(model, theta, **opts) -> PartiallyAdaptedAdapter:
    return PartiallyAdaptedAdapter(model, theta, **opts)


def epsilon_mixture_adapters(base, epsilon: float) -> EpsilonMixtureAdapter:
    return EpsilonMixtureAdapter(base, epsilon)


def make_adapter(model, theta, variant: str, epsilon: float = 0.05, **papf_opts):
    """Adapter for ``variant`` in ``sir``, ``fapf``, ``papf``, ``papf-eps``."""
    variant = variant.lower().replace("ε", "eps")
    if variant == "sir":
        return SIRAdapter(model, theta)
    if variant == "fapf":
        return fapf_adapters(model, theta)
    if variant == "papf":
        return papf_adapters(model, theta, **papf_opts)
    if variant == "papf-eps":
        return epsilon_mixture_adapters(papf_adapters(model, theta, **papf_opts), epsilon)
    raise UnsupportedVariant(f"unknown filter variant {variant!r}")


def asir_step(swarm: Swarm, y_next, adapter, rs, y_prev=None):
    """Advance ``swarm`` by one observation.

    Returns ``(new_swarm, log_increment)``. If either weighting stage has zero
    total weight the increment is ``-inf`` and ``new_swarm`` is ``None``.
    """
    n = swarm.size
    log_g, ctx = adapter.first_stage(swarm.states, y_next, y_prev, rs)
    try:
        first = normalize_log_weights(log_g + swarm.weights.log_normalized)
    except TotalWeightZero:
        return None, -math.inf
    idx = stratified_resample(first, n, rs)
    states, log_w = adapter.propose(swarm.states[idx], _take(ctx, idx), y_next, rs)
    if log_w is None:
        return Swarm.uniform(states, swarm.t + 1), first.log_sum
    try:
        second = normalize_log_weights(log_w)
    except TotalWeightZero:
        return None, -math.inf
    return Swarm(states, second, swarm.t + 1), second.log_mean + first.log_sum


def run_filter(model, theta: Mapping, data, M: int, variant: str, rs, epsilon: float = 0.05, **papf_opts) -> FilterOutput:
    """Run an ASIR filter over ``data`` and return the simulated log-likelihood."""
    if M < 1:
        raise ConfigError("number of particles must be >= 1", key="particles")
    y = data.y if hasattr(data, "y") else np.asarray(data, dtype=float)
    adapter = make_adapter(model, theta, variant, epsilon=epsilon, **papf_opts)
    swarm = Swarm.uniform(model.initial_state(theta, M, rs))
    per_step = np.empty(y.shape[0])
    for t in range(y.shape[0]):
        swarm, inc = asir_step(swarm, y[t], adapter, rs, y[t - 1] if t > 0 else None)
        per_step[t] = inc
        if swarm is None:
            return FilterOutput(per_step[: t + 1], -math.inf, None, True, adapter.fallbacks)
    return FilterOutput(per_step, float(per_step.sum()), swarm, False, adapter.fallbacks)


def kalman_loglik(theta: Mapping, data) -> float:
    """Exact log-likelihood of the AR(1)-plus-noise model."""
    mu, phi, tau2, s2 = theta["mu"], theta["phi"], theta["tau2"], theta["sigma2"]
    if not abs(phi) < 1.0:
        raise ConfigError("|phi| must be < 1 for the stationary start", key="phi")
    y = data.y if hasattr(data, "y") else np.asarray(data, dtype=float)
    m, p = mu, tau2 / (1.0 - phi * phi)
    total = 0.0
    for obs in y:
        f = p + s2
        e = obs - m
        total -= 0.5 * (_LOG_2PI + math.log(f) + e * e / f)
        m_f = m + p / f * e
        p_f = p * s2 / f
        m = mu + phi * (m_f - mu)
        p = phi * phi * p_f + tau2
    return total
