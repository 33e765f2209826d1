import re

import numpy as np
import pytest

from pfmcmc.models import make_model, simulate_data
from pfmcmc.rng import RandomStream


@pytest.fixture
def ar1():
    return make_model("ar1")


@pytest.fixture
def ar1_data(ar1):
    theta = {"mu": 0.0, "phi": 0.6, "tau2": 1.0, "sigma2": 1.0}
    return simulate_data(ar1, theta, 50, RandomStream(11, 0))


def ar1_theta(sigma2=1.0, **kw):
    theta = {"mu": 0.0, "phi": 0.6, "tau2": 1.0, "sigma2": sigma2}
    theta.update(kw)
    return theta


def mean_ratio(logliks, exact):
    """Mean and standard error of exp(loglik - exact)."""
    r = np.exp(np.asarray(logliks) - exact)
    return r.mean(), r.std(ddof=1) / np.sqrt(r.size)


def ar1_covariance(theta, T):
    lag = np.abs(np.subtract.outer(np.arange(T), np.arange(T)))
    return theta["tau2"] * theta["phi"] ** lag / (1 - theta["phi"] ** 2) + theta["sigma2"] * np.eye(T)


def conjugate_mu(theta, y, prior_var=100.0):
    """Posterior mean, variance and log evidence for mu with the other AR1 parameters fixed.

    y ~ N(mu 1, S) and mu ~ N(0, prior_var), so everything is Gaussian.
    """
    from scipy import stats

    y = np.asarray(y, dtype=float)
    S = ar1_covariance(theta, y.size)
    ones = np.ones(y.size)
    Si1 = np.linalg.solve(S, ones)
    prec = 1.0 / prior_var + ones @ Si1
    mean = (Si1 @ y) / prec
    log_ev = stats.multivariate_normal(np.zeros(y.size), S + prior_var * np.outer(ones, ones)).logpdf(y)
    return float(mean), float(1.0 / prec), float(log_ev)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria with one verdict line each")


# criterion number -> (passed, detail), filled by the acceptance tests
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter, config):
    ran = set()
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", getattr(rep, "nodeid", ""))
            if m:
                ran.add(int(m.group(1)))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ran):
        ok, detail = ACCEPTANCE.get(n, (False, "did not complete"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
