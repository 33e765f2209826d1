"""Chain and filter quality measures."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .filters import kalman_loglik, run_filter
from .rng import RandomStream

__all__ = [
    "MAX_LAG",
    "autocorrelation",
    "inefficiency",
    "ect",
    "acceptance_rate",
    "chain_summary",
    "SdCell",
    "SdStudyReport",
    "loglik_sd_study",
    "data_key",
]

MAX_LAG = 1000
_SD_STUDY = 7


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelations ``rho_0..rho_max_lag`` with the biased 1/K normalisation."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    xc = x - x.mean()
    top = np.abs(xc).max()
    if top > 0:
        xc = xc / top  # scale-free; keeps tiny or huge series from under- or overflowing
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1] / n
    if acov[0] <= 0:
        return np.full(max_lag + 1, np.nan)
    return acov / acov[0]


def inefficiency(col, max_lag: int = MAX_LAG) -> float:
    """Inefficiency factor ``1 + 2 sum_{j=1}^{L*} rho_j``.

    ``L`` is the first lag with ``|rho_j| < 2 / sqrt(K)`` and
    ``L* = min(max_lag, L)``; the lag ``L`` itself is included in the sum.
    The result is floored at 1. A constant series gives ``inf``.
    """
    x = np.asarray(col, dtype=float)
    if x.ndim != 1 or x.shape[0] < 100:
        raise ConfigError("inefficiency needs a series of at least 100 values", key="K")
    K = x.shape[0]
    if np.ptp(x) == 0:
        return math.inf
    lags = min(max_lag, K - 1)
    rho = autocorrelation(x, lags)
    below = np.nonzero(np.abs(rho[1:]) < 2.0 / math.sqrt(K))[0]
    L = int(below[0]) + 1 if below.size else lags
    return max(1.0, 1.0 + 2.0 * float(rho[1 : L + 1].sum()))


def ect(IF: float, t_per_iter: float) -> float:
    """Equivalent computing time ``1000 * IF * t`` (seconds)."""
    if not IF >= 1.0:
        raise ConfigError("inefficiency must be >= 1", key="IF")
    if not t_per_iter > 0:
        raise ConfigError("time per iteration must be positive", key="t")
    return 1000.0 * IF * t_per_iter


def acceptance_rate(record, burn_in: int = 0) -> float:
    """Percentage of accepted proposals after ``burn_in`` (record or flag array)."""
    flags = np.asarray(getattr(record, "accepted", record), dtype=bool)[burn_in:]
    if flags.size == 0:
        raise ConfigError("no iterations after burn-in", key="burn_in")
    return 100.0 * float(flags.mean())


def chain_summary(record, burn_in: int = 0, t_per_iter: float | None = None, coords: str = "natural") -> list[dict]:
    """One row per parameter: mean, sd, IF, ECT and acceptance rate."""
    draws = (record.natural if coords == "natural" else record.z)[burn_in:]
    t = record.time_per_iteration if t_per_iter is None else t_per_iter
    acc = acceptance_rate(record, burn_in)
    rows = []
    for i, name in enumerate(record.names):
        col = draws[:, i]
        IF = inefficiency(col)
        rows.append({
            "parameter": name,
            "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)),
            "IF": IF,
            "ECT": ect(IF, t) if math.isfinite(IF) and t > 0 else math.inf,
            "acceptance": acc,
        })
    return rows


def data_key(data) -> int:
    """Stable 63-bit key of a dataset's observations (independent of list order)."""
    y = np.ascontiguousarray(np.asarray(getattr(data, "y", data), dtype=np.float64))
    return int.from_bytes(hashlib.sha256(y.tobytes()).digest()[:8], "little") >> 1


def _cell_key(variant: str, M: int) -> int:
    return int.from_bytes(hashlib.sha256(f"{variant}:{M}".encode()).digest()[:8], "little") >> 1


def _median_iqr(values):
    v = np.asarray(values, dtype=float)
    q25, q50, q75 = np.percentile(v, [25, 50, 75])
    return float(q50), float(q75 - q25)


@dataclass
class SdCell:
    """One (variant, M) cell: per-dataset medians and SDs of the log-likelihood."""

    variant: str
    M: int
    medians: np.ndarray
    sds: np.ndarray

    @property
    def median_median(self):
        return _median_iqr(self.medians)[0]

    @property
    def iqr_median(self):
        return _median_iqr(self.medians)[1]

    @property
    def median_sd(self):
        return _median_iqr(self.sds)[0]

    @property
    def iqr_sd(self):
        return _median_iqr(self.sds)[1]

    def row(self) -> dict:
        return {
            "variant": self.variant,
            "M": self.M,
            "median_loglik": self.median_median,
            "iqr_loglik": self.iqr_median,
            "median_sd": self.median_sd,
            "iqr_sd": self.iqr_sd,
            "datasets": int(self.medians.shape[0]),
        }


@dataclass
class SdStudyReport:
    """Median and IQR, across datasets, of the median and SD of replicated log-likelihoods."""

    cells: list = field(default_factory=list)
    R: int = 0
    seed: int = 0

    def rows(self) -> list[dict]:
        return [c.row() for c in self.cells]

    def cell(self, variant: str, M: int) -> SdCell:
        for c in self.cells:
            if c.variant == variant and c.M == M:
                return c
        raise KeyError((variant, M))


def _replicates(model, theta, data, variant, M, R, seed, options):
    """``R`` log-likelihood replicates for one dataset and one cell."""
    if variant == "kalman":
        return np.full(R, kalman_loglik(theta, data))
    base = RandomStream(seed, _SD_STUDY, _cell_key(variant, M), data_key(data))
    return np.array([run_filter(model, theta, data, M, variant, base.substream(r), **options).loglik for r in range(R)])


def _sd(b) -> float:
    if not np.all(np.isfinite(b)):
        return math.inf
    return 0.0 if np.ptp(b) == 0 else float(np.std(b, ddof=1))


def loglik_sd_study(model, theta, datasets: Sequence, cells: Sequence[tuple], R: int, seed: int,
                    pool=None, **options) -> SdStudyReport:
    """Replicate the simulated log-likelihood at ``theta`` for every cell and dataset.

    Parameters
    ----------
    cells : sequence of (variant, M)
        ``variant`` may be ``"kalman"`` for the exact likelihood (SD 0).
    R : int
        Filter replicates per dataset, at least 2.
    pool : WorkPool, optional
        Evaluates the (cell, dataset) tasks concurrently.

    Notes
    -----
    Each replicate's stream is keyed by the cell and the dataset contents,
    so results do not depend on the order of ``datasets``.
    """
    if R < 2:
        raise ConfigError("R must be >= 2", key="reps")
    tasks = [(model, theta, d, v, int(M), R, seed, options) for v, M in cells for d in datasets]
    out = pool.map(_replicates, tasks) if pool is not None else [_replicates(*t) for t in tasks]
    report = SdStudyReport(R=R, seed=seed)
    n = len(datasets)
    for i, (v, M) in enumerate(cells):
        block = out[i * n : (i + 1) * n]
        meds = np.array([float(np.median(b)) for b in block])
        sds = np.array([_sd(b) for b in block])
        report.cells.append(SdCell(v, int(M), meds, sds))
    return report
