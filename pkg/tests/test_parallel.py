import math
import pickle

import numpy as np
import pytest

from conftest import ar1_theta, conjugate_mu, mean_ratio
from pfmcmc.errors import ConfigError, RoundError
from pfmcmc.filters import kalman_loglik, run_filter
from pfmcmc.likelihood import Evaluation, FilterConfig, PointEvaluator, Target
from pfmcmc.mh import ChainState, mh_accept
from pfmcmc.models import make_model
from pfmcmc.parallel import WORKERS_ENV, WorkPool, default_workers, mp1_round, mp2_loglik
from pfmcmc.proposals import GaussianMixture, ProposalMixture
from pfmcmc.rng import RandomStream, log_mean_exp


def test_mp2_single_worker_is_one_filter_run(ar1, ar1_data):
    rs = RandomStream(4, 1)
    ll = mp2_loglik(ar1, ar1_theta(), ar1_data, 30, 1, rs, variant="sir")
    assert ll == run_filter(ar1, ar1_theta(), ar1_data, 30, "sir", RandomStream(4, 1, 0)).loglik


def test_mp2_averages_in_likelihood_domain(ar1, ar1_data):
    rs = RandomStream(4, 1)
    runs = [run_filter(ar1, ar1_theta(), ar1_data, 30, "sir", rs.substream(w)).loglik for w in range(3)]
    assert mp2_loglik(ar1, ar1_theta(), ar1_data, 30, 3, rs, variant="sir") == pytest.approx(log_mean_exp(runs))


@pytest.mark.parametrize("backend", ["thread", "process"])
def test_mp2_pool_matches_serial(ar1, ar1_data, backend):
    rs = RandomStream(8)
    serial = mp2_loglik(ar1, ar1_theta(), ar1_data, 20, 4, rs, variant="papf")
    with WorkPool(2, backend) as pool:
        pooled = mp2_loglik(ar1, ar1_theta(), ar1_data, 20, 4, rs, variant="papf", pool=pool)
    assert pooled == serial


def test_mp2_is_unbiased(ar1, ar1_data):
    theta = ar1_theta()
    ll = [mp2_loglik(ar1, theta, ar1_data, 25, 4, RandomStream(31, r), variant="fapf") for r in range(300)]
    m, se = mean_ratio(ll, kalman_loglik(theta, ar1_data))
    assert abs(m - 1) < 3 * se


def test_default_workers_from_environment(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert default_workers() == 1
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert default_workers() == 3
    assert WorkPool().workers == 3
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(ConfigError):
        default_workers()


def test_pool_rejects_bad_settings():
    with pytest.raises(ConfigError):
        WorkPool(0)
    with pytest.raises(ConfigError):
        WorkPool(2, "gpu")


def _square(x):
    return x * x


def test_pool_preserves_task_order():
    with WorkPool(3, "process") as pool:
        assert pool.map(_square, [(i,) for i in range(20)]) == [i * i for i in range(20)]


@pytest.fixture
def mu_target(ar1, ar1_data):
    fixed = {"phi": 0.6, "tau2": 1.0, "sigma2": 1.0}
    return Target(ar1, ar1_data, FilterConfig("fapf", 20), fixed=fixed)


def _q(mean=0.0, var=0.2):
    return ProposalMixture(GaussianMixture(np.ones(1), np.array([[mean]]), np.array([[[var]]])), None,
                           (0.8, 0.2, 0.0, 0.0))


def _round(target, q, J, K, rounds, pool=None, seed=5):
    evaluate = PointEvaluator(target, seed, 0)
    accept_rs = RandomStream(seed, 3, 0)
    ev0 = evaluate(np.array([0.0]), 0)
    cur = ChainState(np.array([0.0]), ev0.log_target, ev0.loglik, 0)
    states, batches = [], []
    for _ in range(rounds):
        draw = lambda j: q.sample(RandomStream(seed, 2, 0, j))
        st, acc, batch = mp1_round(cur, q, J, K, evaluate, draw, accept_rs, pool)
        states += st
        batches.append((batch, acc))
        cur = st[-1]
    return states, batches, ev0


def test_mp1_one_by_one_is_a_single_mh_step(mu_target):
    q = _q()
    states, batches, ev0 = _round(mu_target, q, 1, 1, 1)
    batch, acc = batches[0]
    cur = ChainState(np.array([0.0]), ev0.log_target, ev0.loglik, 0)
    prop = ChainState(batch.points[0], batch.log_targets[0], batch.evaluations[0].loglik, 1, 1)
    ref, ok = mh_accept(cur, prop, q.logpdf(cur.z) - q.logpdf(prop.z), RandomStream(5, 3, 0))
    assert ok == acc[0]
    assert np.array_equal(states[0].z, ref.z) and states[0].log_target == ref.log_target


def test_mp1_matches_serial_replay(mu_target):
    q = _q()
    states, batches, ev0 = _round(mu_target, q, 4, 8, 20)
    evaluate = PointEvaluator(mu_target, 5, 0)
    accept_rs = RandomStream(5, 3, 0)
    cur = ChainState(np.array([0.0]), ev0.log_target, ev0.loglik, 0)
    replay = []
    for batch, _ in batches:
        for z, seed in zip(batch.points, batch.pf_seeds):
            ev = evaluate(z, int(seed))
            prop = ChainState(z, ev.log_target, ev.loglik, int(seed), int(seed))
            nxt, ok = mh_accept(cur, prop, q.logpdf(cur.z) - q.logpdf(z), accept_rs)
            cur = nxt if ok else cur.moved_to(int(seed))
            replay.append(cur)
    assert len(replay) == len(states) == 640
    for a, b in zip(states, replay):
        assert np.array_equal(a.z, b.z) and a.log_target == b.log_target and a.pf_seed == b.pf_seed


def test_mp1_process_pool_matches_serial(mu_target):
    q = _q()
    serial, _, _ = _round(mu_target, q, 4, 2, 5)
    with WorkPool(2, "process") as pool:
        pooled, batches, _ = _round(mu_target, q, 4, 2, 5, pool=pool)
    assert [s.log_target for s in serial] == [s.log_target for s in pooled]
    assert batches[0][0].workers.tolist() == [0, 0, 1, 1, 2, 2, 3, 3]


class _Failing:
    def __call__(self, z, pf_seed):
        if pf_seed == 3:
            raise FloatingPointError("boom")
        return Evaluation(0.0, 0.0, 0.0, 0.0)


def test_mp1_round_failure_leaves_chain_untouched():
    cur = ChainState(np.zeros(1), 0.0, 0.0, 0)
    rs = RandomStream(1)
    with pytest.raises(RoundError):
        mp1_round(cur, _q(), 2, 2, _Failing(), lambda j: np.zeros(1), rs)
    assert rs.uniform() == RandomStream(1).uniform()
    assert cur.j == 0


def test_target_pickles_without_pool(mu_target):
    with WorkPool(2, "thread") as pool:
        mu_target.pool = pool
        clone = pickle.loads(pickle.dumps(mu_target))
    assert clone.pool is None and clone.fixed == mu_target.fixed


def test_target_validation(ar1, ar1_data):
    with pytest.raises(ConfigError):
        Target(make_model("sv"), ar1_data, FilterConfig("kalman"))
    with pytest.raises(ConfigError):
        Target(make_model("sv"), ar1_data, FilterConfig("fapf"))
    with pytest.raises(ConfigError):
        Target(ar1, ar1_data, fixed={"nu": 1.0})
    with pytest.raises(ConfigError):
        Target(ar1, ar1_data, fixed={"mu": 0.0, "phi": 0.5, "tau2": 1.0, "sigma2": 1.0})
    with pytest.raises(ConfigError):
        FilterConfig("bootstrap")


def test_target_is_exact_posterior_kernel(ar1, ar1_data):
    theta = ar1_theta()
    fixed = {k: v for k, v in theta.items() if k != "mu"}
    target = Target(ar1, ar1_data, FilterConfig("kalman"), fixed=fixed)
    mean, var, log_ev = conjugate_mu(theta, ar1_data.y)
    for mu in (-0.5, 0.1, 0.7):
        ev = target.evaluate(np.array([mu]), RandomStream(0))
        post = -0.5 * (math.log(2 * math.pi * var) + (mu - mean) ** 2 / var)
        assert ev.log_target - log_ev == pytest.approx(post, abs=1e-8)


def test_evaluate_skips_filter_outside_support(ar1, ar1_data):
    target = Target(make_model("garch"), ar1_data, FilterConfig("fapf", 10))
    z = target.to_z({"tau2": 1.0, "alpha": 0.1, "beta": 0.6, "gamma": 0.5})
    ev = target.evaluate(z, RandomStream(0))
    assert ev.log_target == -math.inf and ev.loglik == -math.inf
    assert target.log_prior_z(z) == -math.inf
