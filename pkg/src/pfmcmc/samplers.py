"""Particle-marginal Metropolis-Hastings with adaptive proposals.

Two samplers are provided. ``arwm`` is the adaptive random walk of
:class:`~pfmcmc.proposals.ArwmState`; ``aimh`` is the adaptive independence
sampler over a :class:`~pfmcmc.proposals.ProposalMixture`, initialised from
an ARWM warm-up run unless a mixture is supplied.

Randomness is split by purpose. For chain ``c`` and iteration ``j``:
``(PROPOSAL, c, j)`` draws the proposal, ``(PF, c, j)`` drives the filter
run at the proposed point (so ``j`` is the point's pf-seed), ``(FIT, c, j)``
seeds a mixture refit and ``(ACCEPT, c)`` is a single sequential stream of
acceptance uniforms. This makes block-parallel (MP1) runs reproduce their
serial replay exactly.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, FitError
from .likelihood import ACCEPT, FIT, PROPOSAL, PointEvaluator, Target
from .mh import ChainState, mh_accept
from .parallel import MODES, WorkPool, mp1_round
from .proposals import AimhSchedule, ArwmState, GaussianMixture, ProposalMixture, aimh_update_schedule, fit_mixture
from .rng import RandomStream

__all__ = [
    "SAMPLERS",
    "WARMUP_CHAIN_OFFSET",
    "DominanceWarning",
    "SamplerConfig",
    "ChainRecord",
    "check_dominance",
    "arwm_warmup",
    "run_chain",
]

SAMPLERS = ("arwm", "aimh")
WARMUP_CHAIN_OFFSET = 1 << 32


class DominanceWarning(UserWarning):
    """The proposal mixture may not dominate the prior."""


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    ``mode`` is ``SP`` (serial), ``MP1`` (blocks of ``workers * block``
    proposals evaluated concurrently, AIMH only) or ``MP2`` (each likelihood
    averaged over ``workers`` filter runs).
    """

    sampler: str = "aimh"
    n_iter: int = 5000
    burn_in: int = 0
    mode: str = "SP"
    workers: int = 1
    block: int = 8
    backend: str | None = None
    j0: int | None = None
    sigma1: tuple | None = None
    schedule: AimhSchedule = field(default_factory=AimhSchedule)
    warmup: int = 1000
    warmup_keep: float = 0.5
    dominance_check: bool = False

    def __post_init__(self):
        s = self.sampler.lower()
        object.__setattr__(self, "sampler", s)
        object.__setattr__(self, "mode", self.mode.upper())
        if s not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler!r}", key="sampler")
        if self.mode not in MODES:
            raise ConfigError(f"unknown parallel mode {self.mode!r}", key="mode")
        if self.mode == "MP1" and s != "aimh":
            raise ConfigError("MP1 needs an independence proposal (aimh)", key="mode")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be >= 1", key="n_iter")
        if not 0 <= self.burn_in < self.n_iter:
            raise ConfigError("burn_in must lie in [0, n_iter)", key="burn_in")
        if self.workers < 1 or self.block < 1:
            raise ConfigError("workers and block must be >= 1", key="workers")
        if not 0.0 < self.warmup_keep <= 1.0:
            raise ConfigError("warmup_keep must lie in (0, 1]", key="warmup_keep")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["schedule"] = self.schedule.to_dict()
        if self.sigma1 is not None:
            out["sigma1"] = np.asarray(self.sigma1).tolist()
        return out


@dataclass
class ChainRecord:
    """Everything a chain produced, indexed by iteration ``j = 1..n``.

    Row ``j - 1`` of the per-iteration arrays describes the chain after
    iteration ``j``: its position, cached log-target and pf-seed, whether
    the proposal was accepted, and the proposal itself.
    """

    names: tuple
    z: np.ndarray
    natural: np.ndarray
    log_target: np.ndarray
    loglik: np.ndarray
    pf_seed: np.ndarray
    accepted: np.ndarray
    proposed: np.ndarray
    proposed_log_target: np.ndarray
    initial: ChainState
    seed: int
    chain: int
    config: dict
    elapsed: float
    proposal: ProposalMixture | None = None
    snapshots: list = field(default_factory=list)
    warmup_elapsed: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def time_per_iteration(self) -> float:
        return self.elapsed / self.n

    def final_state(self) -> ChainState:
        return ChainState(self.z[-1].copy(), float(self.log_target[-1]), float(self.loglik[-1]),
                          int(self.pf_seed[-1]), self.n)

    def acceptance_rate(self, burn_in: int = 0) -> float:
        """Percentage of accepted proposals after ``burn_in`` iterations."""
        acc = self.accepted[burn_in:]
        return 100.0 * float(acc.mean()) if acc.size else float("nan")


def check_dominance(target: Target, q: ProposalMixture, rs: RandomStream, n: int = 1000,
                    max_log_ratio: float = 50.0) -> float:
    """Largest ``log(prior_z / q)`` over prior draws; warns above ``max_log_ratio``.

    Bounded ``prior / q`` is the condition under which the independence
    sampler converges; here it is probed on draws from the prior (in
    unconstrained coordinates, Jacobian included).
    """
    draws = target.prior.sample(rs, n, target.fixed)
    worst = -math.inf
    for row in draws:
        try:
            z = target.to_z(dict(zip(target.free, row)))
        except Exception:  # draw on a support boundary
            continue
        worst = max(worst, target.log_prior_z(z) - q.logpdf(z))
    if worst > max_log_ratio:
        warnings.warn(
            f"prior/proposal log ratio reaches {worst:.1f} on prior draws; "
            "the proposal tails may not dominate the prior",
            DominanceWarning,
            stacklevel=2,
        )
    return worst


class _Recorder:
    def __init__(self, n, d):
        self.z = np.empty((n, d))
        self.lt = np.empty(n)
        self.ll = np.empty(n)
        self.seed = np.empty(n, dtype=np.int64)
        self.acc = np.zeros(n, dtype=bool)
        self.prop = np.empty((n, d))
        self.prop_lt = np.empty(n)

    def put(self, i, state, accepted, z_prop, lt_prop):
        self.z[i] = state.z
        self.lt[i] = state.log_target
        self.ll[i] = state.loglik
        self.seed[i] = state.pf_seed
        self.acc[i] = accepted
        self.prop[i] = z_prop
        self.prop_lt[i] = lt_prop


def _initial_state(target: Target, z0, evaluate) -> ChainState:
    ev = evaluate(z0, 0)
    if ev.log_target == -math.inf:
        raise ConfigError("the starting point has zero posterior density", key="init")
    return ChainState(np.asarray(z0, dtype=float), ev.log_target, ev.loglik, 0, 0)


def _start_point(target: Target, init) -> np.ndarray:
    if init is None:
        init = target.model.start_values(target.data)
    if isinstance(init, dict):
        init = {k: v for k, v in init.items() if k in target.free}
        return target.to_z(init)
    return np.asarray(init, dtype=float)


def _run_arwm(target, cfg, seed, chain, z0, evaluate, rec, sigma1):
    d = target.dim
    arwm = ArwmState(d, sigma1, cfg.j0)
    accept_rs = RandomStream(seed, ACCEPT, chain)
    cur = _initial_state(target, z0, evaluate)
    initial = cur
    for j in range(1, cfg.n_iter + 1):
        zp = arwm.propose(cur.z, j, RandomStream(seed, PROPOSAL, chain, j))
        ev = evaluate(zp, j)
        prop = ChainState(zp, ev.log_target, ev.loglik, j, j)
        nxt, ok = mh_accept(cur, prop, 0.0, accept_rs)
        cur = nxt if ok else cur.moved_to(j)
        arwm.update(cur.z)
        rec.put(j - 1, cur, ok, zp, ev.log_target)
    return initial, None, []


def _refit(q: ProposalMixture, iterates, k, stage, schedule, rs):
    """New proposal after a refit of the adapted group with ``k`` components."""
    d = iterates.shape[1]
    k = min(k, iterates.shape[0] // (10 * d))
    if k < 1:
        return q
    try:
        g3 = fit_mixture(iterates, k, rs)
    except FitError:
        return q
    g1 = q.g1
    if stage == 2 and q.stage == 1 and q.g3 is not None:
        g1 = q.g3  # second stage: the fixed group becomes the last stage-one fit
    return ProposalMixture(g1, g3, schedule.adapted_weights, stage, q.inflate_fixed, q.inflate_adapted)


def _run_aimh(target, cfg, seed, chain, z0, evaluate, rec, q, pool):
    d = target.dim
    schedule = cfg.schedule
    accept_rs = RandomStream(seed, ACCEPT, chain)
    cur = _initial_state(target, z0, evaluate)
    initial = cur
    block = cfg.workers * cfg.block if cfg.mode == "MP1" else 1
    snapshots = [(1, q)]
    accepted = 0
    last_refit = 0
    j = 0
    while j < cfg.n_iter:
        qc = q

        def draw(jj, qc=qc):
            return qc.sample(RandomStream(seed, PROPOSAL, chain, jj))

        states, acc, batch = mp1_round(cur, qc, block, 1, evaluate, draw, accept_rs,
                                       pool if block > 1 else None, len(snapshots) - 1,
                                       limit=cfg.n_iter - j)
        for i, st in enumerate(states):
            rec.put(j + i, st, acc[i], batch.points[i], batch.log_targets[i])
        accepted += int(acc.sum())
        j += len(states)
        cur = states[-1]
        due, k, stage = aimh_update_schedule(j, accepted, d, schedule, last_refit)
        if due and j < cfg.n_iter:
            q = _refit(q, rec.z[:j], k, stage, schedule, RandomStream(seed, FIT, chain, j))
            last_refit = j
            snapshots.append((j + 1, q))
    return initial, q, snapshots


def arwm_warmup(target: Target, n_iter: int, seed: int, chain: int = 0, init=None, keep: float = 0.5,
                sigma1=None, j0: int | None = None):
    """Short ARWM run whose tail gives a normal starting proposal.

    Runs under chain id ``chain + WARMUP_CHAIN_OFFSET`` so its streams never
    collide with the main chain's.

    Returns
    -------
    (GaussianMixture, ndarray, float)
        Normal fitted to the last ``keep`` fraction of iterates, the final
        iterate, and the elapsed seconds.
    """
    cfg = SamplerConfig("arwm", n_iter=n_iter, j0=j0)
    warm_chain = chain + WARMUP_CHAIN_OFFSET
    evaluate = PointEvaluator(target, seed, warm_chain)
    d = target.dim
    rec = _Recorder(n_iter, d)
    t0 = time.perf_counter()
    _run_arwm(target, cfg, seed, warm_chain, _start_point(target, init), evaluate, rec,
              None if sigma1 is None else np.asarray(sigma1, dtype=float).reshape(d, d))
    elapsed = time.perf_counter() - t0
    tail = rec.z[int(n_iter * (1.0 - keep)):]
    if tail.shape[0] >= 10 * d and np.all(np.ptp(tail, axis=0) > 0):
        g1 = fit_mixture(tail, 1)
    else:  # stuck warm-up: centre on the last point with a generic spread
        g1 = GaussianMixture(np.ones(1), rec.z[-1][None], 0.01 * np.eye(d)[None])
    return g1, rec.z[-1].copy(), elapsed


def run_chain(target: Target, config: SamplerConfig, seed: int, chain: int = 0, init=None,
              init_mixture=None, pool: WorkPool | None = None) -> ChainRecord:
    """Run one adaptive PMMH chain.

    Parameters
    ----------
    target : Target
        Posterior and likelihood settings.
    config : SamplerConfig
    seed : int
        Master seed.
    chain : int
        Chain id; distinct ids give independent chains.
    init : mapping or array, optional
        Starting point (natural values by name, or an unconstrained vector).
        Defaults to the model's data-based start values.
    init_mixture : GaussianMixture or ProposalMixture, optional
        AIMH starting proposal. Without it an ARWM warm-up of
        ``config.warmup`` iterations supplies a normal fitted to its
        last ``warmup_keep`` fraction, and the chain starts where the
        warm-up ended.
    pool : WorkPool, optional
        Pool for MP1/MP2 evaluation; one is created from ``config.workers``
        when needed.
    """
    cfg = config
    d = target.dim
    own_pool = None
    if cfg.mode == "MP2" and target.filter.workers != cfg.workers:
        target = replace(target, filter=replace(target.filter, workers=cfg.workers))
    if cfg.mode in ("MP1", "MP2") and pool is None and cfg.workers > 1:
        pool = own_pool = WorkPool(cfg.workers, cfg.backend)
    if cfg.mode == "MP2" and pool is not None:
        target = replace(target, pool=pool)
    evaluate = PointEvaluator(target, seed, chain)
    z0 = _start_point(target, init)
    sigma1 = None if cfg.sigma1 is None else np.asarray(cfg.sigma1, dtype=float).reshape(d, d)
    rec = _Recorder(cfg.n_iter, d)
    notes = []
    try:
        warm_elapsed = 0.0
        if cfg.sampler == "arwm":
            t0 = time.perf_counter()
            initial, q, snapshots = _run_arwm(target, cfg, seed, chain, z0, evaluate, rec, sigma1)
        else:
            if isinstance(init_mixture, ProposalMixture):
                q0 = init_mixture
            elif init_mixture is not None:
                q0 = ProposalMixture(init_mixture, None, cfg.schedule.initial_weights, 1)
            else:
                g1, z0, warm_elapsed = arwm_warmup(target, cfg.warmup, seed, chain, z0, cfg.warmup_keep,
                                                   sigma1, cfg.j0)
                q0 = ProposalMixture(g1, None, cfg.schedule.initial_weights, 1)
            if cfg.dominance_check:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", DominanceWarning)
                    check_dominance(target, q0, RandomStream(seed, FIT, chain, 0))
                for w in caught:
                    notes.append(str(w.message))
                    warnings.warn(w.message, DominanceWarning, stacklevel=2)
            t0 = time.perf_counter()
            initial, q, snapshots = _run_aimh(target, cfg, seed, chain, z0, evaluate, rec, q0, pool)
        elapsed = time.perf_counter() - t0
    finally:
        if own_pool is not None:
            own_pool.close()
    natural = np.array([target.point(z).natural for z in rec.z])
    return ChainRecord(
        names=tuple(target.free),
        z=rec.z,
        natural=natural,
        log_target=rec.lt,
        loglik=rec.ll,
        pf_seed=rec.seed,
        accepted=rec.acc,
        proposed=rec.prop,
        proposed_log_target=rec.prop_lt,
        initial=initial,
        seed=int(seed),
        chain=int(chain),
        config={"target": target.describe(), "sampler": cfg.to_dict(), "seed": int(seed), "chain": int(chain)},
        elapsed=elapsed,
        proposal=q,
        snapshots=snapshots,
        warmup_elapsed=warm_elapsed,
        warnings=notes,
    )
