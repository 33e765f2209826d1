"""State-space models with Gaussian state transitions.

Every model here has a transition that, given the current state (and for
the leverage model the previous observation), is normal in the observed
state component. The filters rely on that through
:meth:`StateSpaceModel.transition_moments`; the generic
``sample_transition`` / ``log_transition_density`` hooks are built on it.

States are numpy arrays with particles on axis 0: shape ``(M,)`` for the
scalar models and ``(M, 2)`` for GARCH, whose state carries the variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit, gammaln

from .errors import ConfigError
from .params import HalfNormal, InverseGamma, Normal, Prior, TruncatedNormal, Uniform, simplex_constraint

__all__ = [
    "Dataset",
    "StateSpaceModel",
    "AR1Noise",
    "BinomialAR",
    "StochasticVolatility",
    "GarchNoise",
    "DEFAULT_THETA",
    "MODELS",
    "make_model",
    "simulate_data",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _norm_logpdf(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


@dataclass(frozen=True)
class Dataset:
    """Observations ``y_1..y_T`` with optional provenance."""

    y: np.ndarray
    name: str = "data"
    theta: dict | None = None
    states: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or y.shape[0] < 1:
            raise ConfigError("a dataset needs at least one observation")
        object.__setattr__(self, "y", y)

    @property
    def T(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class StateSpaceModel:
    """Base class. Subclasses fill in the hooks for one model family."""

    name = "base"
    param_names: tuple = ()
    transforms: dict = field(default_factory=dict)
    fully_adaptable = False
    partially_adaptable = False

    # -- hooks every model provides ------------------------------------------
    def initial_state(self, theta: Mapping, n: int, rs):
        raise NotImplementedError

    def transition_moments(self, states, theta: Mapping, y_prev=None, rs=None):
        """Mean and variance of the next observed-state component, per particle."""
        raise NotImplementedError

    def log_obs(self, y, x, theta: Mapping):
        raise NotImplementedError

    def default_prior(self) -> Prior:
        raise NotImplementedError

    def observed(self, states):
        """The component of the state that enters the observation density."""
        return states

    def next_state(self, states, x_new, var):
        return x_new

    # -- partial adaptation --------------------------------------------------
    def obs_derivatives(self, y, x, theta: Mapping):
        """First and second derivative of ``log p(y|x)`` in ``x``."""
        raise NotImplementedError

    def newton_start(self, y, mean, theta: Mapping):
        return mean

    # -- full adaptation (Gaussian observation y ~ N(x, s2)) ------------------
    def obs_variance(self, theta: Mapping) -> float:
        raise NotImplementedError

    # -- generic hooks -------------------------------------------------------
    def sample_transition(self, states, theta: Mapping, rs, y_prev=None):
        mean, var = self.transition_moments(states, theta, y_prev, rs)
        x_new = mean + np.sqrt(var) * rs.normal(np.shape(mean))
        return self.next_state(states, x_new, var)

    def log_transition_density(self, x_next, states, theta: Mapping, y_prev=None):
        mean, var = self.transition_moments(states, theta, y_prev)
        return _norm_logpdf(x_next, mean, var)

    def check_theta(self, theta: Mapping):
        missing = [n for n in self.param_names if n not in theta]
        if missing:
            raise ConfigError(f"parameter {missing[0]!r} missing for model {self.name}", key=missing[0])

    @property
    def label(self) -> str:
        """Model id as accepted by :func:`make_model`."""
        return self.name

    def start_values(self, data: Dataset) -> dict:
        """Rough data-based parameter values used as a default chain start."""
        raise NotImplementedError

    def validate(self, data: Dataset):
        if not np.all(np.isfinite(data.y)):
            raise ConfigError("observations must be finite")

    def simulate(self, theta: Mapping, T: int, rs) -> Dataset:
        """Draw ``x_0`` from the initial law, then ``x_t`` and ``y_t`` for t=1..T.

        The whole state path is drawn before any observation so that models
        sharing a state equation share the path under a common stream.
        """
        self.check_theta(theta)
        state_rs, obs_rs = rs.substream(0), rs.substream(1)
        states = self.initial_state(theta, 1, state_rs)
        xs = np.empty(T)
        for t in range(T):
            states = self.sample_transition(states, theta, state_rs)
            xs[t] = self.observed(states)[0]
        ys = self.sample_observations(xs, theta, obs_rs)
        return Dataset(ys, name=self.name, theta=dict(theta), states=xs)

    def sample_observations(self, xs, theta, rs):
        raise NotImplementedError


def _ar1_moments(x, theta):
    mu, phi = theta["mu"], theta["phi"]
    return mu + phi * (x - mu)


@dataclass(frozen=True)
class AR1Noise(StateSpaceModel):
    """Gaussian AR(1) signal observed with Gaussian noise."""

    name = "ar1"
    param_names: tuple = ("mu", "phi", "tau2", "sigma2")
    transforms: dict = field(
        default_factory=lambda: {"mu": "real", "phi": "unit", "tau2": "positive", "sigma2": "positive"}
    )
    fully_adaptable = True
    partially_adaptable = True

    def default_prior(self):
        return Prior(
            {
                "mu": Normal(0.0, 100.0),
                "phi": Uniform(0.0, 1.0),
                "tau2": InverseGamma(0.1, 0.1),
                "sigma2": InverseGamma(0.1, 0.1),
            }
        )

    def initial_state(self, theta, n, rs):
        mu, phi, tau2 = theta["mu"], theta["phi"], theta["tau2"]
        return mu + math.sqrt(tau2 / (1.0 - phi * phi)) * rs.normal(n)

    def start_values(self, data):
        v = float(np.var(data.y)) or 1.0
        return {"mu": float(np.mean(data.y)), "phi": 0.5, "tau2": 0.5 * v, "sigma2": 0.5 * v}

    def transition_moments(self, states, theta, y_prev=None, rs=None):
        mean = _ar1_moments(states, theta)
        return mean, np.full(np.shape(mean), theta["tau2"])

    def log_obs(self, y, x, theta):
        return _norm_logpdf(y, x, theta["sigma2"])

    def obs_derivatives(self, y, x, theta):
        s2 = theta["sigma2"]
        return (y - x) / s2, np.full(np.shape(x), -1.0 / s2)

    def obs_variance(self, theta):
        return theta["sigma2"]

    def sample_observations(self, xs, theta, rs):
        return xs + math.sqrt(theta["sigma2"]) * rs.normal(xs.shape[0])


@dataclass(frozen=True)
class BinomialAR(StateSpaceModel):
    """Binomial counts with logistic link on an AR(1) state."""

    name = "binomial"
    trials: int = 100
    param_names: tuple = ("mu", "phi", "tau2")
    transforms: dict = field(default_factory=lambda: {"mu": "real", "phi": "unit", "tau2": "positive"})
    partially_adaptable = True
    # use logit(y/m) as the Newton start from this many trials on
    large_trials: int = 200

    def default_prior(self):
        return Prior({"mu": Normal(0.0, 100.0), "phi": Uniform(0.0, 1.0), "tau2": HalfNormal(100.0)})

    def initial_state(self, theta, n, rs):
        mu, phi, tau2 = theta["mu"], theta["phi"], theta["tau2"]
        return mu + math.sqrt(tau2 / (1.0 - phi * phi)) * rs.normal(n)

    def transition_moments(self, states, theta, y_prev=None, rs=None):
        mean = _ar1_moments(states, theta)
        return mean, np.full(np.shape(mean), theta["tau2"])

    def start_values(self, data):
        frac = float(np.clip(np.mean(data.y) / self.trials, 0.01, 0.99))
        return {"mu": math.log(frac / (1.0 - frac)), "phi": 0.5, "tau2": 0.5}

    def _log_choose(self, y):
        m = self.trials
        return gammaln(m + 1.0) - gammaln(y + 1.0) - gammaln(m - y + 1.0)

    def log_obs(self, y, x, theta):
        return self._log_choose(y) + y * x - self.trials * np.logaddexp(0.0, x)

    def obs_derivatives(self, y, x, theta):
        p = expit(x)
        return y - self.trials * p, -self.trials * p * (1.0 - p)

    def newton_start(self, y, mean, theta):
        if self.trials < self.large_trials:
            return mean
        # keep the start finite when y hits 0 or m
        frac = np.clip(y / self.trials, 0.5 / self.trials, 1.0 - 0.5 / self.trials)
        return np.full(np.shape(mean), math.log(frac) - math.log1p(-frac))

    def validate(self, data):
        super().validate(data)
        y = data.y
        if np.any(y < 0) or np.any(y > self.trials) or np.any(y != np.round(y)):
            raise ConfigError(f"binomial observations must be integers in [0, {self.trials}]")

    def sample_observations(self, xs, theta, rs):
        return rs.generator.binomial(self.trials, expit(xs)).astype(float)


@dataclass(frozen=True)
class StochasticVolatility(StateSpaceModel):
    """Stochastic volatility with optional leverage and outliers.

    ``y_t = K_t exp(x_t / 2) eps_t`` with ``Pr(K_t = kappa) = omega``; the
    log-volatility is AR(1) with innovation variance ``sigma2`` and
    ``corr(eps_t, eta_t) = rho`` when leverage is on.

    With leverage the next state is drawn given the previous observation:
    the shock ``eps_t = y_t exp(-x_t/2) / K_t`` enters the mean and the
    variance shrinks by ``1 - rho^2``. ``K_t`` is drawn per particle from its
    conditional law given ``(x_t, y_t)``, which keeps the filter targeting the
    stated model.
    """

    name = "sv"
    leverage: bool = False
    outliers: bool = False
    omega: float = 0.03
    kappa: float = 2.5
    param_names: tuple = ()
    transforms: dict = field(default_factory=dict)
    partially_adaptable = True

    def __post_init__(self):
        names = ("mu", "phi", "sigma2") + (("rho",) if self.leverage else ())
        kinds = {"mu": "real", "phi": "unit", "sigma2": "positive", "rho": "corr"}
        object.__setattr__(self, "param_names", names)
        object.__setattr__(self, "transforms", {n: kinds[n] for n in names})

    @property
    def variant_name(self):
        return "sv" + ("-lev" if self.leverage else "") + ("-out" if self.outliers else "")

    @property
    def outlier_prob(self):
        return self.omega if self.outliers else 0.0

    def default_prior(self):
        marg = {
            "mu": Normal(0.0, 100.0),
            "phi": TruncatedNormal(0.9, 0.1, 0.0, 1.0),
            "sigma2": InverseGamma(0.01, 0.01),
        }
        if self.leverage:
            marg["rho"] = TruncatedNormal(0.0, 1e6, -1.0, 1.0)
        return Prior(marg)

    def initial_state(self, theta, n, rs):
        mu, phi, s2 = theta["mu"], theta["phi"], theta["sigma2"]
        return mu + math.sqrt(s2 / (1.0 - phi * phi)) * rs.normal(n)

    @property
    def label(self):
        return self.variant_name

    def start_values(self, data):
        out = {"mu": math.log(float(np.mean(data.y**2)) or 1.0), "phi": 0.9, "sigma2": 0.1}
        if self.leverage:
            out["rho"] = 0.0
        return out

    def _component_logpdfs(self, y, x):
        base = -0.5 * (_LOG_2PI + x + y * y * np.exp(-x))
        k2 = self.kappa**2
        wide = -0.5 * (_LOG_2PI + math.log(k2) + x + y * y * np.exp(-x) / k2)
        return base, wide

    def outlier_responsibility(self, y, x):
        """``Pr(K_t = kappa | x_t, y_t)``."""
        w = self.outlier_prob
        if w == 0.0:
            return np.zeros(np.shape(x))
        base, wide = self._component_logpdfs(y, x)
        return expit(math.log(w) + wide - math.log1p(-w) - base)

    def transition_moments(self, states, theta, y_prev=None, rs=None):
        mu, phi, s2 = theta["mu"], theta["phi"], theta["sigma2"]
        mean = mu + phi * (states - mu)
        if not self.leverage or y_prev is None:
            return mean, np.full(np.shape(mean), s2)
        rho = theta["rho"]
        scale = np.ones(np.shape(states))
        if self.outlier_prob > 0.0:
            if rs is None:
                raise ConfigError("sampling the outlier indicator needs a random stream")
            resp = self.outlier_responsibility(y_prev, states)
            scale = np.where(rs.uniform(np.shape(states)) < resp, self.kappa, 1.0)
        eps = y_prev * np.exp(-0.5 * states) / scale
        mean = mean + math.sqrt(s2) * rho * eps
        return mean, np.full(np.shape(mean), s2 * (1.0 - rho * rho))

    def log_transition_density(self, x_next, states, theta, y_prev=None):
        if not (self.leverage and self.outlier_prob > 0.0 and y_prev is not None):
            return super().log_transition_density(x_next, states, theta, y_prev)
        # mixture over the outlier indicator of the previous observation
        mu, phi, s2, rho = theta["mu"], theta["phi"], theta["sigma2"], theta["rho"]
        resp = self.outlier_responsibility(y_prev, states)
        base_mean = mu + phi * (states - mu)
        var = s2 * (1.0 - rho * rho)
        shock = math.sqrt(s2) * rho * y_prev * np.exp(-0.5 * states)
        l1 = _norm_logpdf(x_next, base_mean + shock, var)
        l2 = _norm_logpdf(x_next, base_mean + shock / self.kappa, var)
        with np.errstate(divide="ignore"):
            return np.logaddexp(np.log1p(-resp) + l1, np.log(resp) + l2)

    def log_obs(self, y, x, theta):
        base, wide = self._component_logpdfs(y, x)
        w = self.outlier_prob
        if w == 0.0:
            return base
        return np.logaddexp(math.log1p(-w) + base, math.log(w) + wide)

    def obs_derivatives(self, y, x, theta):
        e = y * y * np.exp(-x)
        d1_base, d2_base = -0.5 + 0.5 * e, -0.5 * e
        w = self.outlier_prob
        if w == 0.0:
            return d1_base, d2_base
        k2 = self.kappa**2
        d1_wide, d2_wide = -0.5 + 0.5 * e / k2, -0.5 * e / k2
        r = self.outlier_responsibility(y, x)
        # far from the mode e overflows; the non-finite result sends the caller to its fallback
        with np.errstate(over="ignore", invalid="ignore"):
            d1 = (1 - r) * d1_base + r * d1_wide
            d2 = (1 - r) * (d2_base + d1_base**2) + r * (d2_wide + d1_wide**2) - d1 * d1
        return d1, d2

    def simulate(self, theta, T, rs):
        self.check_theta(theta)
        mu, phi, s2 = theta["mu"], theta["phi"], theta["sigma2"]
        rho = theta.get("rho", 0.0) if self.leverage else 0.0
        x = self.initial_state(theta, 1, rs.substream(0))[0]
        shocks = rs.substream(1)
        eps, xi = shocks.normal(T), shocks.normal(T + 1)
        k = np.where(rs.substream(2).uniform(T) < self.outlier_prob, self.kappa, 1.0)
        xs, ys = np.empty(T), np.empty(T)
        # x_1 from x_0 carries no leverage term: there is no y_0
        eta = xi[0]
        for t in range(T):
            x = mu + phi * (x - mu) + math.sqrt(s2) * eta
            xs[t] = x
            ys[t] = k[t] * math.exp(0.5 * x) * eps[t]
            eta = rho * eps[t] + math.sqrt(1.0 - rho * rho) * xi[t + 1]
        return Dataset(ys, name=self.variant_name, theta=dict(theta), states=xs)


@dataclass(frozen=True)
class GarchNoise(StateSpaceModel):
    """GARCH(1,1) signal observed with Gaussian noise.

    State columns are ``(x_t, sigma_t^2)``; ``sigma_{t+1}^2 = alpha + beta
    x_t^2 + gamma sigma_t^2`` and ``x_{t+1} ~ N(0, sigma_{t+1}^2)``.
    """

    name = "garch"
    param_names: tuple = ("tau2", "alpha", "beta", "gamma")
    transforms: dict = field(
        default_factory=lambda: {"tau2": "positive", "alpha": "positive", "beta": "unit", "gamma": "unit"}
    )
    fully_adaptable = True
    partially_adaptable = True

    def default_prior(self):
        return Prior(
            {
                "tau2": HalfNormal(100.0),
                "alpha": HalfNormal(100.0),
                "beta": Uniform(0.0, 1.0),
                "gamma": Uniform(0.0, 1.0),
            },
            constraints=(simplex_constraint("beta", "gamma"),),
            joint_log_norm=math.log(2.0),
        )

    def initial_state(self, theta, n, rs):
        persistence = theta["beta"] + theta["gamma"]
        if not persistence < 1.0:
            raise ConfigError("GARCH needs beta + gamma < 1 for a stationary start")
        var0 = theta["alpha"] / (1.0 - persistence)
        return np.column_stack([math.sqrt(var0) * rs.normal(n), np.full(n, var0)])

    def start_values(self, data):
        v = float(np.var(data.y)) or 1.0
        return {"tau2": 0.1 * v, "alpha": 0.9 * v * 0.05, "beta": 0.1, "gamma": 0.85}

    def transition_moments(self, states, theta, y_prev=None, rs=None):
        states = np.asarray(states)
        x, s2 = states[..., 0], states[..., 1]
        var = theta["alpha"] + theta["beta"] * x * x + theta["gamma"] * s2
        return np.zeros(np.shape(var)), var

    def observed(self, states):
        return np.asarray(states)[..., 0]

    def next_state(self, states, x_new, var):
        return np.stack([x_new, var], axis=-1)

    def log_obs(self, y, x, theta):
        return _norm_logpdf(y, x, theta["tau2"])

    def obs_derivatives(self, y, x, theta):
        t2 = theta["tau2"]
        return (y - x) / t2, np.full(np.shape(x), -1.0 / t2)

    def obs_variance(self, theta):
        return theta["tau2"]

    def sample_observations(self, xs, theta, rs):
        return xs + math.sqrt(theta["tau2"]) * rs.normal(xs.shape[0])


# Parameter values used when simulating without an explicit theta.
DEFAULT_THETA = {
    "ar1": {"mu": 0.0, "phi": 0.6, "tau2": 1.0, "sigma2": 1.0},
    "binomial": {"mu": 0.0, "phi": 0.97, "tau2": 0.25},
    "sv": {"mu": -0.43, "phi": 0.988, "sigma2": 0.0142},
    "sv-lev": {"mu": -0.56, "phi": 0.981, "sigma2": 0.0106, "rho": -0.76},
    "sv-out": {"mu": -0.18, "phi": 0.991, "sigma2": 0.0116},
    "sv-lev-out": {"mu": -0.58, "phi": 0.983, "sigma2": 0.0091, "rho": -0.77},
    "garch": {"tau2": 0.00027, "alpha": 0.0000495, "beta": 0.8927539, "gamma": 0.0377854},
}

MODELS = {
    "ar1": lambda **kw: AR1Noise(),
    "binomial": lambda trials=100, **kw: BinomialAR(trials=int(trials)),
    "sv": lambda **kw: StochasticVolatility(),
    "sv-lev": lambda **kw: StochasticVolatility(leverage=True),
    "sv-out": lambda omega=0.03, **kw: StochasticVolatility(outliers=True, omega=float(omega)),
    "sv-lev-out": lambda omega=0.03, **kw: StochasticVolatility(leverage=True, outliers=True, omega=float(omega)),
    "garch": lambda **kw: GarchNoise(),
}


def make_model(model_id: str, **options) -> StateSpaceModel:
    """Build a model by id (``ar1``, ``binomial``, ``sv[-lev][-out]``, ``garch``)."""
    try:
        factory = MODELS[model_id]
    except KeyError:
        raise ConfigError(f"unknown model {model_id!r}", key="model") from None
    return factory(**options)


def simulate_data(model: StateSpaceModel, theta: Mapping, T: int, rs) -> Dataset:
    if T < 1:
        raise ConfigError("T must be >= 1", key="T")
    return model.simulate(theta, T, rs)
