"""Marginal likelihood from chain output: bridge and importance sampling.

Everything is in unconstrained coordinates: ``log_target`` is the simulated
log-likelihood plus the log prior plus the log-Jacobian, and ``q`` is the
proposal density on the same scale, so the Jacobian cancels in every ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import inefficiency
from .errors import EvidenceError
from .likelihood import EVIDENCE, PointEvaluator, Target
from .proposals import ProposalMixture, fit_mixture
from .rng import RandomStream, log_mean_exp

__all__ = [
    "EVIDENCE_CHAIN_OFFSET",
    "MAX_EXCLUDED",
    "EvidenceInput",
    "EvidenceResult",
    "estimate_U",
    "bridge_sampling",
    "importance_sampling",
    "bridge_se",
    "evidence_from_chain",
]

EVIDENCE_CHAIN_OFFSET = 2 << 32
MAX_EXCLUDED = 0.10


@dataclass
class EvidenceInput:
    """Draws from the posterior and from ``q`` with cached log-densities.

    ``post_log_target``/``post_log_q`` are at posterior draws and
    ``prop_log_target``/``prop_log_q`` at proposal draws. A proposal draw
    with ``-inf`` target is a legitimate zero (outside the support or a
    degenerate filter run); NaN or ``+inf`` entries anywhere, and
    non-finite values at posterior draws, are excluded and counted.
    """

    post_log_target: np.ndarray
    post_log_q: np.ndarray
    prop_log_target: np.ndarray
    prop_log_q: np.ndarray
    log_U: float
    exclusions: dict = field(default_factory=dict)

    def __post_init__(self):
        pt, pq = np.asarray(self.post_log_target, float), np.asarray(self.post_log_q, float)
        xt, xq = np.asarray(self.prop_log_target, float), np.asarray(self.prop_log_q, float)
        if pt.size == 0 or xt.size == 0:
            raise EvidenceError("both draw sets must be nonempty")
        if pt.shape != pq.shape or xt.shape != xq.shape:
            raise EvidenceError("cached arrays disagree in length")
        keep_post = np.isfinite(pt) & np.isfinite(pq)
        keep_prop = ~np.isnan(xt) & (xt < np.inf) & np.isfinite(xq)
        self.exclusions = {"posterior": int((~keep_post).sum()), "proposal": int((~keep_prop).sum())}
        for name, keep in (("posterior", keep_post), ("proposal", keep_prop)):
            if (~keep).mean() > MAX_EXCLUDED:
                raise EvidenceError(
                    f"{(~keep).sum()} of {keep.size} {name} draws have unusable cached values "
                    f"(more than {MAX_EXCLUDED:.0%})"
                )
        self.post_log_target, self.post_log_q = pt[keep_post], pq[keep_post]
        self.prop_log_target, self.prop_log_q = xt[keep_prop], xq[keep_prop]
        if not math.isfinite(self.log_U):
            raise EvidenceError("log U must be finite")

    @property
    def J(self) -> int:
        return self.post_log_target.shape[0]

    @property
    def K(self) -> int:
        return self.prop_log_target.shape[0]


def estimate_U(log_target_star: float, log_q_star: float, post_log_target=None, post_log_q=None) -> float:
    """``log U = log p_S(y|t*) + log p(t*) - log q(t*)`` (Jacobian cancels).

    Falls back to the posterior draw with the largest log-target when the
    point ``t*`` has zero proposal or target density.
    """
    if math.isfinite(log_target_star) and math.isfinite(log_q_star):
        return float(log_target_star - log_q_star)
    if post_log_target is None:
        raise EvidenceError("no usable point for U and no posterior draws to fall back on")
    lt = np.asarray(post_log_target, float)
    lq = np.asarray(post_log_q, float)
    ok = np.isfinite(lt) & np.isfinite(lq)
    if not ok.any():
        raise EvidenceError("no posterior draw has finite target and proposal density")
    i = int(np.argmax(np.where(ok, lt, -np.inf)))
    return float(lt[i] - lq[i])


def _bridge_terms(inp: EvidenceInput):
    # t = 1 / (pi/U + q): log(t q) and log(t pi) without overflow
    lu = inp.log_U
    a = inp.post_log_q - np.logaddexp(inp.post_log_target - lu, inp.post_log_q)
    with np.errstate(invalid="ignore"):
        a1 = np.where(
            inp.prop_log_target == -np.inf,
            -np.inf,
            inp.prop_log_target - np.logaddexp(inp.prop_log_target - lu, inp.prop_log_q),
        )
    return a, a1


def bridge_sampling(inp: EvidenceInput) -> float:
    """``log(A1 / A)`` with ``A`` averaged over posterior and ``A1`` over proposal draws."""
    a, a1 = _bridge_terms(inp)
    log_A = log_mean_exp(a)
    if log_A == -math.inf:
        raise EvidenceError("bridge denominator underflows: q vanishes on all posterior draws")
    log_A1 = log_mean_exp(a1)
    if log_A1 == -math.inf:
        raise EvidenceError("bridge numerator is zero: every proposal draw has zero target")
    return float(log_A1 - log_A)


def bridge_se(inp: EvidenceInput) -> float:
    """Delta-method standard error of the log bridge estimate.

    The posterior term is inflated by the inefficiency of its series.
    """
    a, a1 = _bridge_terms(inp)
    ea = np.exp(a - a.max())
    ea1 = np.exp(a1 - a1.max())
    va = ea.var(ddof=1) / ea.mean() ** 2 / a.size
    if a.size >= 100 and np.ptp(ea) > 0:
        va *= inefficiency(ea)
    va1 = ea1.var(ddof=1) / ea1.mean() ** 2 / a1.size
    return float(math.sqrt(va + va1))


def importance_sampling(prop_log_target, prop_log_q) -> float:
    """``log mean(pi / q)`` over proposal draws."""
    lt = np.asarray(prop_log_target, float)
    lq = np.asarray(prop_log_q, float)
    with np.errstate(invalid="ignore"):
        r = np.where(lt == -np.inf, -np.inf, lt - lq)
    if r.size == 0 or np.all(r == -np.inf):
        raise EvidenceError("every importance ratio is zero")
    return log_mean_exp(r)


@dataclass
class EvidenceResult:
    model: str
    log_BS: float
    log_IS: float
    K: int
    J: int
    exclusions: dict
    seed: int
    log_U: float
    se_BS: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "log_BS": self.log_BS,
            "log_IS": self.log_IS,
            "K": self.K,
            "J": self.J,
            "exclusions": dict(self.exclusions),
            "seed": self.seed,
            "log_U": self.log_U,
            "se_BS": self.se_BS,
        }


def _default_proposal(z) -> ProposalMixture:
    d = z.shape[1]
    g1 = fit_mixture(z, 1)
    k = max(1, min(3, z.shape[0] // (10 * d)))
    g3 = fit_mixture(z, k, RandomStream(0))
    return ProposalMixture(g1, g3, (0.15, 0.05, 0.7, 0.1), 2)


def evidence_from_chain(target: Target, record, seed: int, burn_in: int = 0, thin: int = 1, K: int | None = None,
                        q: ProposalMixture | None = None, pool=None, log_U: float | None = None) -> EvidenceResult:
    """Bridge and importance-sampling evidence from a finished chain.

    Posterior draws are the retained iterates with their cached log-targets.
    ``K`` proposal draws (default: as many as retained iterates) are drawn
    from ``q`` (default: the chain's final proposal) and each gets one fresh
    filter run. ``U`` is computed at the posterior mean in unconstrained
    coordinates unless given.
    """
    if thin < 1:
        raise EvidenceError("thin must be >= 1")
    z = record.z[burn_in::thin]
    lt = record.log_target[burn_in::thin]
    if z.shape[0] == 0:
        raise EvidenceError("no posterior draws after burn-in")
    q = q or record.proposal or _default_proposal(z)
    K = z.shape[0] if K is None else int(K)
    if K < 1:
        raise EvidenceError("K must be >= 1")
    chain = EVIDENCE_CHAIN_OFFSET + int(record.chain)
    evaluate = PointEvaluator(target, seed, chain)
    draws = np.array([q.sample(RandomStream(seed, EVIDENCE, chain, k)) for k in range(1, K + 1)])
    tasks = [(draws[k], k + 1) for k in range(K)]
    evals = pool.map(evaluate, tasks) if pool is not None else [evaluate(*t) for t in tasks]
    prop_lt = np.array([e.log_target for e in evals])
    prop_lq = np.asarray(q.logpdf(draws), float).reshape(K)
    post_lq = np.asarray(q.logpdf(z), float).reshape(z.shape[0])
    if log_U is None:
        z_star = z.mean(axis=0)
        star = evaluate(z_star, 0)
        log_U = estimate_U(star.log_target, q.logpdf(z_star), lt, post_lq)
    inp = EvidenceInput(lt, post_lq, prop_lt, prop_lq, log_U)
    log_bs = bridge_sampling(inp)
    log_is = importance_sampling(inp.prop_log_target, inp.prop_log_q)
    return EvidenceResult(
        model=target.model.label,
        log_BS=log_bs,
        log_IS=log_is,
        K=inp.K,
        J=inp.J,
        exclusions=inp.exclusions,
        seed=int(seed),
        log_U=float(log_U),
        se_BS=bridge_se(inp),
    )
