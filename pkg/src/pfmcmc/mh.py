"""Chain state and the Metropolis-Hastings accept step."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .rng import RandomStream

__all__ = ["ChainState", "log_acceptance", "mh_accept"]


@dataclass(frozen=True)
class ChainState:
    """Chain position with its cached log-target.

    ``pf_seed`` identifies the filter stream that produced ``log_target``;
    re-running the filter at ``z`` with that seed reproduces it exactly.
    """

    z: np.ndarray
    log_target: float
    loglik: float
    pf_seed: int
    j: int = 0

    def moved_to(self, j: int) -> "ChainState":
        return replace(self, j=j)


def log_acceptance(current: float, proposed: float, log_q_ratio: float = 0.0) -> float:
    """``min(0, proposed - current + log_q_ratio)``; ``-inf`` iff ``proposed`` is ``-inf``."""
    if proposed == -math.inf or proposed != proposed:
        return -math.inf
    if current == -math.inf:
        return 0.0
    return min(0.0, proposed - current + log_q_ratio)


def mh_accept(current: ChainState, proposed: ChainState, log_q_ratio: float, rs: RandomStream):
    """One accept/reject decision.

    ``log_q_ratio`` is ``log q(current) - log q(proposed)`` for independence
    proposals and 0 for symmetric ones. Exactly one uniform is drawn from
    ``rs`` whatever the outcome.

    Returns
    -------
    (ChainState, bool)
        The next state and whether the proposal was accepted.
    """
    u = rs.uniform()
    la = log_acceptance(current.log_target, proposed.log_target, log_q_ratio)
    if la > -math.inf and math.log(u) < la:
        return proposed, True
    return current, False
