"""Parallel likelihood evaluation: block proposals (MP1) and likelihood averaging (MP2).

Tasks handed to a :class:`WorkPool` are pure functions of their arguments and
results come back in task order, so parallel runs reproduce serial ones
exactly.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, RoundError
from .filters import run_filter
from .rng import RandomStream, log_mean_exp

__all__ = [
    "WORKERS_ENV",
    "MODES",
    "default_workers",
    "WorkPool",
    "ProposalBatch",
    "mp2_loglik",
    "mp1_round",
]

WORKERS_ENV = "PFMCMC_WORKERS"
MODES = ("SP", "MP1", "MP2")


def default_workers() -> int:
    """Worker count from ``PFMCMC_WORKERS`` (default 1)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}", key=WORKERS_ENV) from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1", key=WORKERS_ENV)
    return n


def _call(fn, args):
    return fn(*args)


class WorkPool:
    """Ordered map over a serial loop, threads or processes.

    Parameters
    ----------
    workers : int, optional
        Defaults to :func:`default_workers`.
    backend : {"serial", "thread", "process"}, optional
        Defaults to ``serial`` for one worker and ``process`` otherwise.
    """

    def __init__(self, workers: int | None = None, backend: str | None = None):
        self.workers = default_workers() if workers is None else int(workers)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", key="workers")
        self.backend = backend or ("serial" if self.workers == 1 else "process")
        if self.backend not in ("serial", "thread", "process"):
            raise ConfigError(f"unknown pool backend {self.backend!r}", key="backend")
        self._executor = None

    def _ensure(self):
        if self._executor is None and self.backend != "serial":
            cls = ThreadPoolExecutor if self.backend == "thread" else ProcessPoolExecutor
            self._executor = cls(max_workers=self.workers)
        return self._executor

    def map(self, fn: Callable, tasks: Sequence[tuple]) -> list:
        """``[fn(*t) for t in tasks]``, evaluated by the pool, in task order."""
        tasks = list(tasks)
        if self.backend == "serial" or len(tasks) <= 1:
            return [fn(*t) for t in tasks]
        ex = self._ensure()
        return list(ex.map(_call, [fn] * len(tasks), tasks))

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def mp2_loglik(model, theta, data, M: int, J: int, rs: RandomStream, variant: str = "fapf",
               epsilon: float = 0.05, pool: WorkPool | None = None, **papf_opts) -> float:
    """Log of the average of ``J`` independent simulated likelihoods.

    Run ``w`` uses ``rs.substream(w)``. The average of unbiased likelihood
    estimates is unbiased, so this is a drop-in likelihood with ``J * M``
    particles in total. Returns ``-inf`` only if every run degenerates.
    """
    if J < 1:
        raise ConfigError("J must be >= 1", key="workers")
    tasks = [(model, theta, data, M, variant, rs.substream(w), epsilon) for w in range(J)]
    if pool is None or J == 1:
        outs = [run_filter(*t, **papf_opts) for t in tasks]
    else:
        outs = pool.map(_filter_task, [t + (papf_opts,) for t in tasks])
    lls = np.array([o.loglik for o in outs])
    return log_mean_exp(lls) if J > 1 else float(lls[0])


def _filter_task(model, theta, data, M, variant, rs, epsilon, opts):
    return run_filter(model, theta, data, M, variant, rs, epsilon, **opts)


@dataclass
class ProposalBatch:
    """Points proposed in one round from one frozen proposal snapshot."""

    points: np.ndarray
    pf_seeds: np.ndarray
    log_targets: np.ndarray
    log_q: np.ndarray
    evaluations: list
    snapshot: int
    workers: np.ndarray

    @property
    def log_ratios(self) -> np.ndarray:
        """Cached ``log[p_S(y|theta) p(theta) / q(theta)]`` per point."""
        return self.log_targets - self.log_q


def mp1_round(state, q, J: int, K: int, evaluate: Callable, draw: Callable, accept_rs: RandomStream,
              pool: WorkPool | None = None, snapshot: int = 0, limit: int | None = None):
    """Advance an independence-proposal chain by ``J * K`` steps.

    Parameters
    ----------
    state : ChainState
        Current chain position; its log-density under ``q`` is recomputed
        because ``q`` may have changed since it was accepted.
    q : object with ``logpdf``
        The frozen proposal for the whole round.
    evaluate : callable
        ``evaluate(z, pf_seed) -> Evaluation``; must be picklable for a
        process pool.
    draw : callable
        ``draw(j) -> z`` proposal for iteration ``j`` (its own stream).
    accept_rs : RandomStream
        Dedicated stream of acceptance uniforms, consumed once per step.
    limit : int, optional
        Truncate the round at this many steps.

    Returns
    -------
    states : list of ChainState
        Chain position after each step.
    accepted : ndarray of bool
    batch : ProposalBatch

    Raises
    ------
    RoundError
        If any evaluation fails. No uniforms are consumed and the caller's
        state is untouched.
    """
    from .mh import ChainState, mh_accept

    n = J * K if limit is None else min(J * K, limit)
    if n < 1:
        raise ConfigError("a round needs at least one proposal", key="block")
    j0 = state.j
    seeds = np.arange(j0 + 1, j0 + 1 + n)
    points = np.array([draw(int(j)) for j in seeds])
    try:
        tasks = [(points[i], int(seeds[i])) for i in range(n)]
        evals = pool.map(evaluate, tasks) if pool is not None else [evaluate(*t) for t in tasks]
    except Exception as exc:  # any worker failure aborts the round
        raise RoundError(f"round starting at iteration {j0 + 1} failed: {exc}") from exc
    log_q = np.array([q.logpdf(p) for p in points])
    batch = ProposalBatch(
        points, seeds, np.array([e.log_target for e in evals]), log_q, evals, snapshot,
        np.arange(n) // K,
    )
    cur = state
    cur_lq = q.logpdf(cur.z)
    states, accepted = [], np.zeros(n, dtype=bool)
    for i in range(n):
        prop = ChainState(points[i], evals[i].log_target, evals[i].loglik, int(seeds[i]), int(seeds[i]))
        ratio = cur_lq - log_q[i] if math.isfinite(cur_lq) else 0.0
        nxt, ok = mh_accept(cur, prop, ratio, accept_rs)
        if ok:
            cur_lq = log_q[i]
        else:
            nxt = cur.moved_to(int(seeds[i]))
        cur = nxt
        states.append(cur)
        accepted[i] = ok
    return states, accepted, batch
