"""Seeded random streams, log-domain weight arithmetic and resampling.

Every random quantity in the package is drawn from a :class:`RandomStream`.
A stream is identified by a master seed and a path of integer stream ids;
the pair is hashed into the 128-bit key of a Philox counter-based generator,
so distinct paths give non-overlapping, independent sequences and any stream
can be rebuilt from its identity alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TotalWeightZero

__all__ = [
    "RandomStream",
    "WeightVector",
    "normalize_log_weights",
    "log_mean_exp",
    "stratified_indices",
    "stratified_resample",
    "multinomial_indices",
    "multinomial_resample",
]

_MASK64 = (1 << 64) - 1


class RandomStream:
    """A reproducible random stream addressed by ``(seed, *ids)``.

    Parameters
    ----------
    seed : int
        Master seed (reduced modulo 2**64).
    *ids : int
        Stream-id path. ``RandomStream(s, 3, 7)`` is the same stream as
        ``RandomStream(s, 3).substream(7)``.

    Notes
    -----
    A stream is single-owner: it carries a position and must not be shared
    between concurrent workers. Hand each worker its own substream instead.
    """

    __slots__ = ("seed", "ids", "_gen")

    def __init__(self, seed: int, *ids: int):
        self.seed = int(seed) & _MASK64
        self.ids = tuple(int(i) & _MASK64 for i in ids)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.ids)
        key = ss.generate_state(2, dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def substream(self, *ids: int) -> "RandomStream":
        """Return the child stream at ``self.ids + ids`` (fresh position)."""
        return RandomStream(self.seed, *self.ids, *ids)

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def multivariate_normal(self, mean, chol, size=None):
        """Draw ``mean + chol @ z`` with ``z`` standard normal."""
        mean = np.asarray(mean, dtype=float)
        d = mean.shape[-1]
        if size is None:
            return mean + chol @ self.normal(d)
        z = self.normal((size, d))
        return mean + z @ np.asarray(chol).T

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    @property
    def generator(self) -> np.random.Generator:
        """The underlying numpy generator (same position as the stream)."""
        return self._gen

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, ids={self.ids})"


@dataclass(frozen=True)
class WeightVector:
    """Normalized weights together with the log of the mean raw weight."""

    log_unnormalized: np.ndarray
    normalized: np.ndarray
    log_mean: float

    @property
    def log_sum(self) -> float:
        return self.log_mean + np.log(self.log_unnormalized.shape[0])

    @property
    def log_normalized(self) -> np.ndarray:
        return self.log_unnormalized - self.log_sum

    def __len__(self):
        return self.normalized.shape[0]


def normalize_log_weights(logw) -> WeightVector:
    """Normalize log weights with the max-shift trick.

    Raises
    ------
    TotalWeightZero
        If every entry is ``-inf`` (or the array contains NaN).
    """
    logw = np.asarray(logw, dtype=float)
    if logw.ndim != 1 or logw.shape[0] == 0:
        raise ValueError("log weights must be a nonempty 1-d array")
    top = logw.max()
    if not np.isfinite(top):
        if top == np.inf:
            raise ValueError("log weights must not contain +inf")
        raise TotalWeightZero("all particle weights are zero")
    w = np.exp(logw - top)
    total = w.sum()
    return WeightVector(logw, w / total, float(top + np.log(total / logw.shape[0])))


def log_mean_exp(values) -> float:
    """``log(mean(exp(values)))`` computed stably; ``-inf`` if all are ``-inf``."""
    values = np.asarray(values, dtype=float)
    top = values.max()
    if top == -np.inf:
        return -np.inf
    return float(top + np.log(np.mean(np.exp(values - top))))


def _cdf(weights):
    probs = weights.normalized if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    cdf = np.cumsum(probs)
    if not cdf[-1] > 0:
        raise TotalWeightZero("all particle weights are zero")
    return cdf


def _invert(cdf, u):
    # u in [0, 1) is mapped onto [0, cdf[-1]) so rounding in the cumulative
    # sum can never select an index past the last positive weight.
    return np.searchsorted(cdf, u * cdf[-1], side="right")


def stratified_indices(weights, v) -> np.ndarray:
    """Stratified inverse-CDF lookup at ``u_m = (m + v_m) / M``.

    ``v`` holds one offset in [0, 1) per output slot (length M); the
    particles are traversed in their natural index order.
    """
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    return _invert(_cdf(weights), (np.arange(n) + v) / n)


def stratified_resample(weights, n: int, rs: RandomStream) -> np.ndarray:
    """Draw ``n`` ancestor indices by stratified sampling (0-based)."""
    if n < 1:
        raise ValueError("number of draws must be >= 1")
    return stratified_indices(weights, rs.uniform(n))


def multinomial_indices(weights, u) -> np.ndarray:
    """Independent inverse-CDF lookups at the uniforms ``u``."""
    return _invert(_cdf(weights), np.asarray(u, dtype=float))


def multinomial_resample(weights, n: int, rs: RandomStream) -> np.ndarray:
    """Draw ``n`` ancestor indices by multinomial sampling (0-based)."""
    if n < 1:
        raise ValueError("number of draws must be >= 1")
    return multinomial_indices(weights, rs.uniform(n))
