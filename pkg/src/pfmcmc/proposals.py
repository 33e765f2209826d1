"""Adaptive proposals: the random-walk mixture and the four-group normal mixture."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, solve_triangular
from scipy.special import logsumexp

from .errors import ConfigError, FitError
from .rng import RandomStream

__all__ = [
    "KAPPA1_D",
    "KAPPA2_D",
    "ArwmState",
    "GaussianMixture",
    "fit_mixture",
    "ProposalMixture",
    "AimhSchedule",
    "aimh_update_schedule",
    "arwm_propose",
    "aimh_propose",
    "aimh_log_density",
]

KAPPA1_D = 0.1**2
KAPPA2_D = 2.38**2
_LOG_2PI = math.log(2.0 * math.pi)


def _chol(cov):
    """Lower Cholesky factor, or None if ``cov`` is not positive definite."""
    try:
        c, _ = cho_factor(cov, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        return None
    return np.tril(c)


class ArwmState:
    """Two-component random-walk proposal with a running covariance.

    Draws from ``w1 N(z, k1 S1) + w2 N(z, k2 S2_j)`` where ``S2_j`` is the
    sample covariance of iterates ``1..j-1``, ``k1 = 0.01/d`` and
    ``k2 = 2.38^2/d``. ``w1 = 1`` for ``j <= j0`` and 0.05 afterwards.
    """

    def __init__(self, d: int, sigma1=None, j0: int | None = None, late_weight: float = 0.05):
        if d < 1:
            raise ConfigError("dimension must be >= 1", key="dim")
        self.d = d
        self.sigma1 = np.eye(d) if sigma1 is None else np.atleast_2d(np.asarray(sigma1, dtype=float))
        if self.sigma1.shape != (d, d):
            raise ConfigError(f"sigma1 must be {d}x{d}", key="sigma1")
        self.kappa1 = KAPPA1_D / d
        self.kappa2 = KAPPA2_D / d
        self.j0 = max(100, 10 * d) if j0 is None else int(j0)
        self.late_weight = late_weight
        self._chol1 = _chol(self.kappa1 * self.sigma1)
        if self._chol1 is None:
            raise ConfigError("sigma1 must be positive definite", key="sigma1")
        self.n = 0
        self.mean = np.zeros(d)
        self._m2 = np.zeros((d, d))

    def weights(self, j: int) -> tuple[float, float]:
        if j <= self.j0:
            return 1.0, 0.0
        return self.late_weight, 1.0 - self.late_weight

    def update(self, z):
        """Add one iterate to the running mean and covariance (Welford)."""
        z = np.asarray(z, dtype=float)
        self.n += 1
        delta = z - self.mean
        self.mean = self.mean + delta / self.n
        self._m2 = self._m2 + np.outer(delta, z - self.mean)

    @property
    def sigma2(self):
        """Sample covariance of the iterates seen so far (None before two)."""
        if self.n < 2:
            return None
        return self._m2 / (self.n - 1)

    def propose(self, z, j: int, rs: RandomStream) -> np.ndarray:
        if j < 1:
            raise ConfigError("iteration index must be >= 1", key="j")
        u = rs.uniform()
        eps = rs.normal(self.d)
        w1, _ = self.weights(j)
        chol = self._chol1
        if u >= w1 and self.sigma2 is not None:
            c2 = _chol(self.kappa2 * self.sigma2)
            if c2 is not None:
                chol = c2
        return np.asarray(z, dtype=float) + chol @ eps


def arwm_propose(z, j: int, arwm: ArwmState, rs: RandomStream) -> np.ndarray:
    return arwm.propose(z, j, rs)


@dataclass(frozen=True)
class GaussianMixture:
    """Finite mixture of multivariate normals."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    _chols: np.ndarray = field(init=False, repr=False, compare=False)
    _logdets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        k, d = means.shape
        if w.shape != (k,) or covs.shape != (k, d, d):
            raise ConfigError("mixture weights, means and covariances disagree in shape")
        if np.any(w < 0) or not abs(w.sum() - 1.0) < 1e-9:
            raise ConfigError("mixture weights must be nonnegative and sum to 1")
        chols = []
        for c in covs:
            if not np.allclose(c, c.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(c).max())):
                raise ConfigError("mixture covariances must be symmetric")
            L = _chol(c)
            if L is None:
                raise ConfigError("mixture covariances must be positive definite")
            chols.append(L)
        chols = np.array(chols)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", 0.5 * (covs + np.swapaxes(covs, 1, 2)))
        object.__setattr__(self, "_chols", chols)
        object.__setattr__(self, "_logdets", 2.0 * np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1))

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def scaled(self, factor: float) -> "GaussianMixture":
        """Same weights and means, covariances multiplied by ``factor``."""
        return GaussianMixture(self.weights, self.means, self.covs * factor)

    def component_logpdf(self, z) -> np.ndarray:
        """``log w_c + log N(z; m_c, S_c)`` as an ``(n, k)`` array."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.empty((z.shape[0], self.k))
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        for c in range(self.k):
            r = solve_triangular(self._chols[c], (z - self.means[c]).T, lower=True)
            out[:, c] = logw[c] - 0.5 * (self.d * _LOG_2PI + self._logdets[c] + np.sum(r * r, axis=0))
        return out

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        vals = logsumexp(self.component_logpdf(z), axis=1)
        return float(vals[0]) if z.ndim <= 1 else vals

    def sample(self, rs: RandomStream, n: int | None = None):
        """Ancestral draws: a component uniform, then ``d`` normals, per draw."""
        if n is None:
            return self._one(rs)
        return np.array([self._one(rs) for _ in range(n)])

    def _one(self, rs):
        c = min(int(np.searchsorted(np.cumsum(self.weights), rs.uniform(), side="right")), self.k - 1)
        return self.means[c] + self._chols[c] @ rs.normal(self.d)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "covs": self.covs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixture":
        return cls(np.array(d["weights"]), np.array(d["means"]), np.array(d["covs"]))


def _kmeans(X, k, rs, n_iter=25):
    """k-means++ seeding followed by Lloyd iterations; returns labels."""
    n = X.shape[0]
    centers = [X[int(rs.integers(0, n))]]
    for _ in range(1, k):
        d2 = np.min([np.sum((X - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(X[int(rs.integers(0, n))])
            continue
        idx = int(np.searchsorted(np.cumsum(d2), rs.uniform() * total, side="right"))
        centers.append(X[min(idx, n - 1)])
    centers = np.array(centers)
    labels = np.zeros(n, dtype=int)
    for _ in range(n_iter):
        dist = np.stack([np.sum((X - c) ** 2, axis=1) for c in centers], axis=1)
        new = np.argmin(dist, axis=1)
        for c in range(k):
            if np.any(new == c):
                centers[c] = X[new == c].mean(axis=0)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels


def fit_mixture(X, k: int, rs: RandomStream | None = None, max_iter: int = 200, tol: float = 1e-8) -> GaussianMixture:
    """Maximum-likelihood mixture of ``k`` normals by EM.

    Starts from a k-means partition and adds ``1e-8 * trace(S) / d`` to every
    covariance diagonal, so the result is positive definite even for
    degenerate input. Components that lose almost all their mass are
    dropped, so the result may have fewer than ``k`` components.

    Raises
    ------
    FitError
        If ``X`` has fewer than ``10 * d * k`` rows.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if k < 1:
        raise FitError("number of components must be >= 1")
    if n < 10 * d * k:
        raise FitError(f"need at least {10 * d * k} rows to fit {k} components in {d} dimensions, got {n}")
    if not np.all(np.isfinite(X)):
        raise FitError("iterates contain non-finite values")
    rs = RandomStream(0) if rs is None else rs
    total_cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True))
    tr = float(np.trace(total_cov)) / d
    ridge = 1e-8 * (tr if tr > 0 else 1.0) * np.eye(d)

    def m_step(resp):
        nk = resp.sum(axis=0)
        means = (resp.T @ X) / nk[:, None]
        covs = np.empty((len(nk), d, d))
        for c in range(len(nk)):
            diff = X - means[c]
            covs[c] = (resp[:, c, None] * diff).T @ diff / nk[c] + ridge
        return nk / n, means, covs

    if k == 1:
        return GaussianMixture(np.ones(1), X.mean(axis=0)[None], total_cov[None] + ridge)

    labels = _kmeans(X, k, rs)
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0
    resp = resp[:, resp.sum(axis=0) > d]
    if resp.shape[1] == 0:
        return GaussianMixture(np.ones(1), X.mean(axis=0)[None], total_cov[None] + ridge)
    w, means, covs = m_step(resp)
    prev = -math.inf
    for _ in range(max_iter):
        mix = GaussianMixture(w, means, covs)
        lp = mix.component_logpdf(X)
        norm = logsumexp(lp, axis=1)
        ll = float(norm.sum())
        resp = np.exp(lp - norm[:, None])
        keep = resp.sum(axis=0) > d
        if not np.all(keep):
            resp = resp[:, keep]
            resp /= resp.sum(axis=1, keepdims=True)
        w, means, covs = m_step(resp)
        w = w / w.sum()
        if abs(ll - prev) <= tol * n:
            break
        prev = ll
    return GaussianMixture(w, means, covs)


@dataclass(frozen=True)
class ProposalMixture:
    """Four-group independence proposal.

    Groups are ``g1`` (a fixed estimate of the target), ``g2`` (``g1`` with
    covariances times ``inflate_fixed``), ``g3`` (the adapted mixture) and
    ``g4`` (``g3`` with covariances times ``inflate_adapted``).
    """

    g1: GaussianMixture
    g3: GaussianMixture | None
    weights: tuple
    stage: int = 1
    inflate_fixed: float = 10.0
    inflate_adapted: float = 20.0
    _groups: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if len(w) != 4 or min(w) < 0 or not abs(sum(w) - 1.0) < 1e-9:
            raise ConfigError("group weights must be four nonnegative numbers summing to 1", key="group_weights")
        if self.g3 is None and (w[2] > 0 or w[3] > 0):
            raise ConfigError("adapted groups carry weight before any fit", key="group_weights")
        object.__setattr__(self, "weights", w)
        g3 = self.g3
        groups = (
            self.g1,
            self.g1.scaled(self.inflate_fixed),
            g3,
            g3.scaled(self.inflate_adapted) if g3 is not None else None,
        )
        object.__setattr__(self, "_groups", groups)

    @property
    def d(self) -> int:
        return self.g1.d

    @property
    def groups(self) -> tuple:
        return self._groups

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        parts = []
        for w, g in zip(self.weights, self._groups):
            if w > 0:
                parts.append(math.log(w) + np.atleast_1d(g.logpdf(z)))
        vals = logsumexp(np.stack(parts, axis=0), axis=0)
        return float(vals[0]) if z.ndim <= 1 else vals

    def sample(self, rs: RandomStream, n: int | None = None):
        if n is not None:
            return np.array([self.sample(rs) for _ in range(n)])
        u = rs.uniform()
        cdf = np.cumsum(self.weights)
        gi = min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), 3)
        while self.weights[gi] == 0:  # guard against rounding at the cdf edge
            gi -= 1
        return self._groups[gi].sample(rs)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "group_weights": list(self.weights),
            "g1": self.g1.to_dict(),
            "g3": self.g3.to_dict() if self.g3 is not None else None,
            "inflate": [self.inflate_fixed, self.inflate_adapted],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProposalMixture":
        g3 = GaussianMixture.from_dict(d["g3"]) if d.get("g3") else None
        inf = d.get("inflate", [10.0, 20.0])
        return cls(GaussianMixture.from_dict(d["g1"]), g3, tuple(d["group_weights"]), d.get("stage", 1), *inf)


def aimh_propose(mix: ProposalMixture, rs: RandomStream) -> np.ndarray:
    return mix.sample(rs)


def aimh_log_density(mix: ProposalMixture, z) -> float:
    return mix.logpdf(z)


@dataclass(frozen=True)
class AimhSchedule:
    """When and how the adapted group is refitted.

    ``thresholds[i]`` is the accepted-draws-per-dimension level at which the
    fitted mixture may use ``i + 1`` components.
    """

    checkpoints: tuple = (100, 200, 500, 1000, 1500, 2000, 3000, 4000, 5000, 10000, 15000, 20000)
    thresholds: tuple = (0, 50, 150, 300, 600, 1000)
    stage2_at: int | None = 2000
    initial_weights: tuple = (0.8, 0.2, 0.0, 0.0)
    adapted_weights: tuple = (0.15, 0.05, 0.7, 0.1)
    max_components: int = 6

    def __post_init__(self):
        cps = tuple(int(c) for c in self.checkpoints)
        if any(b <= a for a, b in zip(cps, cps[1:])) or any(c < 1 for c in cps):
            raise ConfigError("checkpoints must be increasing positive integers", key="checkpoints")
        object.__setattr__(self, "checkpoints", cps)
        if self.stage2_at is not None and self.stage2_at not in cps:
            raise ConfigError("stage 2 must start at a checkpoint", key="stage2_at")

    def to_dict(self) -> dict:
        return {
            "checkpoints": list(self.checkpoints),
            "thresholds": list(self.thresholds),
            "stage2_at": self.stage2_at,
            "initial_weights": list(self.initial_weights),
            "adapted_weights": list(self.adapted_weights),
            "max_components": self.max_components,
        }


def aimh_update_schedule(j: int, accepted: int, d: int, config: AimhSchedule, last_refit: int | None = None):
    """Decide whether to refit after iteration ``j``.

    A refit is due when a checkpoint ``c`` satisfies ``last_refit < c <= j``
    (with ``last_refit = j - 1`` when omitted, i.e. ``j`` itself is a
    checkpoint). The component count is the number of thresholds not above
    ``accepted / d``, capped at ``max_components``. The stage is 2 once the
    stage-2 checkpoint has been reached.

    Returns
    -------
    (bool, int, int)
        ``(should_refit, k_components, stage)``.
    """
    lo = j - 1 if last_refit is None else last_refit
    due = any(lo < c <= j for c in config.checkpoints)
    ratio = accepted / d
    k = sum(1 for t in config.thresholds if ratio >= t)
    k = max(1, min(k, config.max_components))
    stage = 2 if config.stage2_at is not None and j >= config.stage2_at else 1
    return due, k, stage
