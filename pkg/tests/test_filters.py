import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import ar1_theta, mean_ratio
from pfmcmc.errors import ConfigError, UnsupportedVariant
from pfmcmc.filters import (
    EpsilonMixtureAdapter,
    FullyAdaptedAdapter,
    PartiallyAdaptedAdapter,
    SIRAdapter,
    Swarm,
    asir_step,
    kalman_loglik,
    make_adapter,
    run_filter,
)
from pfmcmc.models import DEFAULT_THETA, Dataset, make_model, simulate_data
from pfmcmc.rng import RandomStream, normalize_log_weights

LOG_4PI = math.log(4 * math.pi)


def toeplitz_loglik(theta, y):
    T = len(y)
    lag = np.abs(np.subtract.outer(np.arange(T), np.arange(T)))
    cov = theta["tau2"] * theta["phi"] ** lag / (1 - theta["phi"] ** 2) + theta["sigma2"] * np.eye(T)
    return stats.multivariate_normal(np.full(T, theta["mu"]), cov).logpdf(y)


def test_kalman_single_zero_observation():
    theta = {"mu": 0.0, "phi": 0.0, "tau2": 1.0, "sigma2": 1.0}
    assert kalman_loglik(theta, np.array([0.0])) == pytest.approx(-0.5 * LOG_4PI, abs=1e-12)
    assert kalman_loglik(theta, np.array([0.0])) == pytest.approx(-1.26551, abs=1e-5)
    assert kalman_loglik(theta, np.array([0.0, 0.0])) == pytest.approx(-LOG_4PI, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_kalman_matches_dense_gaussian(seed):
    theta = {"mu": 0.3, "phi": 0.6, "tau2": 0.8, "sigma2": 0.5}
    y = RandomStream(seed).normal(20)
    assert kalman_loglik(theta, y) == pytest.approx(toeplitz_loglik(theta, y), abs=1e-8)


def test_kalman_rejects_unit_root():
    with pytest.raises(ConfigError):
        kalman_loglik({"mu": 0, "phi": 1.0, "tau2": 1, "sigma2": 1}, np.zeros(3))


def test_fapf_conjugate_normal():
    theta = {"mu": 0.0, "phi": 0.0, "tau2": 1.0, "sigma2": 1.0}
    log_g, ctx = FullyAdaptedAdapter(make_model("ar1"), theta).first_stage(np.array([0.0]), 2.0)
    assert ctx["prop_mean"][0] == pytest.approx(1.0)
    assert ctx["prop_var"][0] == pytest.approx(0.5)
    assert log_g[0] == pytest.approx(-0.5 * LOG_4PI - 1.0, abs=1e-12)
    assert log_g[0] == pytest.approx(-2.26551, abs=1e-5)


def test_fapf_garch_predictive():
    theta = {"tau2": 1.0, "alpha": 1.0, "beta": 0.1, "gamma": 0.1}
    log_g, ctx = FullyAdaptedAdapter(make_model("garch"), theta).first_stage(np.array([[0.0, 0.0]]), 2.0)
    assert ctx["var"][0] == pytest.approx(1.0)
    assert ctx["prop_var"][0] == pytest.approx(0.5)
    assert ctx["prop_mean"][0] == pytest.approx(1.0)
    assert log_g[0] == pytest.approx(stats.norm(0, math.sqrt(2)).logpdf(2.0))


def _swarm(n, rs, spread=1.0):
    states = spread * rs.normal(n)
    return Swarm(states, normalize_log_weights(rs.normal(n)))


def test_fapf_increment_is_predictive_mixture():
    model, theta = make_model("ar1"), ar1_theta(0.3)
    sw = _swarm(20, RandomStream(1))
    y = 0.7
    _, inc = asir_step(sw, y, FullyAdaptedAdapter(model, theta), RandomStream(2))
    mean = theta["mu"] + theta["phi"] * (sw.states - theta["mu"])
    pred = stats.norm(mean, math.sqrt(theta["tau2"] + theta["sigma2"])).pdf(y)
    assert inc == pytest.approx(math.log(np.sum(pred * sw.weights.normalized)), abs=1e-12)


def test_sir_increment_is_mean_obs_density():
    model, theta = make_model("ar1"), ar1_theta(0.3)
    sw = _swarm(20, RandomStream(1))
    new, inc = asir_step(sw, 0.7, SIRAdapter(model, theta), RandomStream(2))
    dens = stats.norm(new.states, math.sqrt(theta["sigma2"])).pdf(0.7)
    assert inc == pytest.approx(math.log(dens.mean()), abs=1e-12)


def test_single_particle_sir_increment():
    model, theta = make_model("ar1"), ar1_theta(0.3)
    new, inc = asir_step(Swarm.uniform(np.array([0.4])), 0.7, SIRAdapter(model, theta), RandomStream(5))
    assert inc == pytest.approx(float(model.log_obs(0.7, new.states, theta)[0]))


def test_single_particle_papf_increment_algebra():
    model = make_model("binomial", trials=20)
    theta = DEFAULT_THETA["binomial"]
    adapter = PartiallyAdaptedAdapter(model, theta)
    x0, y = np.array([0.1]), 13.0
    new, inc = asir_step(Swarm.uniform(x0), y, adapter, RandomStream(3))
    log_g, ctx = adapter.first_stage(x0, y)
    x1 = new.states
    expected = (model.log_obs(y, x1, theta) + stats.norm(ctx["mean"], math.sqrt(ctx["var"][0])).logpdf(x1)
                - stats.norm(ctx["prop_mean"], math.sqrt(ctx["prop_var"][0])).logpdf(x1) - log_g + log_g)
    assert inc == pytest.approx(float(expected[0]), abs=1e-10)


@pytest.mark.parametrize("variant", ["sir", "fapf", "papf", "papf-eps"])
def test_t1_increment_invariant_to_particle_order(variant):
    model, theta = make_model("ar1"), ar1_theta(0.3)
    rs = RandomStream(4)
    sw = _swarm(30, rs)
    perm = RandomStream(5).generator.permutation(30)
    swp = Swarm(sw.states[perm], normalize_log_weights(sw.weights.log_unnormalized[perm]))
    incs = []
    for s in (sw, swp):
        out = [asir_step(s, 0.5, make_adapter(model, theta, variant), RandomStream(6, r))[1] for r in range(400)]
        incs.append(out)
    if variant == "fapf":
        assert incs[0][0] == pytest.approx(incs[1][0], abs=1e-12)
    else:
        a, b = np.exp(incs[0]), np.exp(incs[1])
        se = math.sqrt(a.var() / a.size + b.var() / b.size)
        assert abs(a.mean() - b.mean()) < 4 * se + 1e-12


def test_binomial_papf_symmetric_mode():
    model = make_model("binomial", trials=100)
    adapter = PartiallyAdaptedAdapter(model, {"mu": 0.0, "phi": 0.5, "tau2": 1.0})
    mode, curv, ok = adapter.find_mode(50.0, np.zeros(1), np.ones(1))
    assert ok[0]
    assert mode[0] == pytest.approx(0.0, abs=1e-12)
    assert curv[0] == pytest.approx(1 / 26, abs=1e-12)


def test_binomial_newton_start_large_trials():
    model = make_model("binomial", trials=500)
    assert model.newton_start(100.0, np.zeros(2), {}) == pytest.approx(math.log(0.2 / 0.8))
    small = make_model("binomial", trials=100)
    assert np.array_equal(small.newton_start(20.0, np.array([0.3, 0.4]), {}), [0.3, 0.4])


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["binomial", "sv", "sv-out"]), st.floats(-2, 2), st.floats(0.05, 2.0), st.integers(0, 10**6),
       st.sampled_from(["newton", "fixed-point"]))
def test_papf_mode_matches_grid_argmax(model_id, mean, var, seed, method):
    model = make_model(model_id, trials=100)
    theta = DEFAULT_THETA[model.label]
    rs = RandomStream(seed)
    y = float(rs.integers(0, 101)) if model_id == "binomial" else float(rs.normal() * math.exp(mean / 2))
    adapter = PartiallyAdaptedAdapter(model, theta, method=method, max_iter=500)
    mode, curv, ok = adapter.find_mode(y, np.array([mean]), np.array([var]))
    if not ok[0]:
        assert method == "fixed-point"
        return
    sd = math.sqrt(var)
    for width in (10 * sd, 1e-3 * sd):
        centre = mode[0] if width < sd else mean
        grid = np.linspace(centre - width, centre + width, 200001)
        lam = adapter._lam(y, grid, mean, var)
        best = grid[np.argmax(lam)]
    assert mode[0] == pytest.approx(best, abs=1e-6)


def test_papf_fixed_steps_reports_last_iterate():
    model = make_model("binomial", trials=100)
    adapter = PartiallyAdaptedAdapter(model, DEFAULT_THETA["binomial"], fixed_steps=2)
    mode, curv, ok = adapter.find_mode(80.0, np.zeros(3), np.full(3, 0.5))
    assert ok.all() and np.all(curv > 0)


def test_epsilon_one_recovers_sir_weights():
    model, theta = make_model("ar1"), ar1_theta(0.3)
    base = PartiallyAdaptedAdapter(model, theta)
    adapter = EpsilonMixtureAdapter(base, 1 - 1e-12)
    sw = _swarm(10, RandomStream(1))
    log_g, ctx = adapter.first_stage(sw.states, 0.7)
    assert np.allclose(log_g, 0.0, atol=1e-10)
    x = RandomStream(3).normal(10)
    w_eps = model.log_obs(0.7, x, theta) + stats.norm(ctx["mean"], math.sqrt(theta["tau2"])).logpdf(x) \
        - adapter.log_joint_proposal(x, ctx)
    assert np.allclose(w_eps, model.log_obs(0.7, x, theta), atol=1e-9)


def test_epsilon_zero_limit_recovers_base_weights():
    model, theta = make_model("ar1"), ar1_theta(0.3)
    base = PartiallyAdaptedAdapter(model, theta)
    sw = _swarm(10, RandomStream(1))
    log_g0, ctx0 = base.first_stage(sw.states, 0.7)
    x = ctx0["prop_mean"] + 0.1
    w0 = base.log_step_weights(x, ctx0, 0.7)
    for eps in (1e-3, 1e-5):
        adapter = EpsilonMixtureAdapter(base, eps)
        log_g, ctx = adapter.first_stage(sw.states, 0.7)
        assert np.allclose(log_g, log_g0, atol=10 * eps * np.exp(-log_g0).max())
        w = model.log_obs(0.7, x, theta) + stats.norm(ctx["mean"], math.sqrt(theta["tau2"])).logpdf(x) \
            - adapter.log_joint_proposal(x, ctx) + log_g - log_g0
        assert np.allclose(w, w0, atol=1e3 * eps)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 0.5))
def test_epsilon_weights_bounded(seed, eps):
    model = make_model("binomial", trials=50)
    theta = DEFAULT_THETA["binomial"]
    adapter = EpsilonMixtureAdapter(PartiallyAdaptedAdapter(model, theta), eps)
    rs = RandomStream(seed)
    y = float(rs.integers(0, 51))
    sw = _swarm(50, rs)
    log_g, ctx = adapter.first_stage(sw.states, y)
    _, log_w = adapter.propose(sw.states, ctx, y, rs)
    # p(y|x) p(x'|x) / [g(y|x) q(x'|x,y)] <= sup p(y|x) / eps, with q the joint proposal
    log_c1 = model.log_obs(y, np.log(max(y, 0.5) / max(50 - y, 0.5)), theta)
    assert np.all(log_w + log_g <= log_c1 - math.log(eps) + 1e-9)


@pytest.mark.parametrize("variant, M", [("sir", 100), ("fapf", 50), ("papf", 50), ("papf-eps", 50)])
def test_filter_is_unbiased(ar1_data, variant, M):
    theta = ar1_theta(1.0)
    exact = kalman_loglik(theta, ar1_data)
    ll = [run_filter(make_model("ar1"), theta, ar1_data, M, variant, RandomStream(21, r)).loglik for r in range(300)]
    m, se = mean_ratio(ll, exact)
    assert abs(m - 1) < 3 * se


def test_fapf_beats_sir_at_high_snr():
    model, theta = make_model("ar1"), ar1_theta(0.01)
    data = simulate_data(model, theta, 100, RandomStream(3))
    sd = {v: np.std([run_filter(model, theta, data, 200, v, RandomStream(1, r)).loglik for r in range(40)])
          for v in ("sir", "fapf")}
    assert sd["fapf"] < sd["sir"] / 3


def test_run_filter_reproducible_and_shapes(ar1_data):
    a = run_filter(make_model("ar1"), ar1_theta(), ar1_data, 30, "papf", RandomStream(1))
    b = run_filter(make_model("ar1"), ar1_theta(), ar1_data, 30, "papf", RandomStream(1))
    assert a.loglik == b.loglik
    assert a.per_step.shape == (ar1_data.T,)
    assert a.loglik == pytest.approx(a.per_step.sum())
    assert a.swarm.size == 30 and not a.degenerate


def test_degenerate_run_reports_minus_inf():
    # the squared residual overflows, so every observation weight is exactly zero
    with np.errstate(over="ignore"):
        out = run_filter(make_model("ar1"), ar1_theta(), Dataset(np.array([0.0, 1e200, 0.0])), 10, "sir",
                         RandomStream(0))
    assert out.degenerate and out.loglik == -math.inf and out.swarm is None
    assert out.per_step.shape == (2,)


def test_unsupported_variants():
    with pytest.raises(UnsupportedVariant):
        make_adapter(make_model("sv"), DEFAULT_THETA["sv"], "fapf")
    with pytest.raises(UnsupportedVariant):
        make_adapter(make_model("ar1"), ar1_theta(), "gibbs")
    with pytest.raises(ConfigError):
        make_adapter(make_model("ar1"), ar1_theta(), "papf-eps", epsilon=1.5)
    with pytest.raises(ConfigError):
        run_filter(make_model("ar1"), ar1_theta(), np.zeros(3), 0, "sir", RandomStream(0))


@pytest.mark.parametrize("model_id, variant", [("sv", "papf"), ("sv-lev", "papf"), ("sv-lev-out", "papf-eps"),
                                              ("garch", "fapf"), ("garch", "papf"), ("binomial", "papf-eps")])
def test_every_model_filters(model_id, variant):
    model = make_model(model_id)
    theta = DEFAULT_THETA[model.label]
    data = simulate_data(model, theta, 40, RandomStream(2))
    out = run_filter(model, theta, data, 50, variant, RandomStream(3))
    assert math.isfinite(out.loglik)
