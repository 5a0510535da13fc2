import numpy as np
import pytest
from scipy import linalg, stats

from tricov.estimator import FactorSet
from tricov.tensor import TrialTensor


def random_pd(rng, k, ridge=0.5):
    a = rng.standard_normal((k, k))
    return a @ a.T / k + ridge * np.eye(k)


def random_toeplitz_pd(rng, q):
    lam = rng.uniform(0.2, 0.8)
    f = rng.uniform(0.0, 0.4)
    row = lam ** np.arange(q) * np.cos(2 * np.pi * f * np.arange(q))
    row[0] += 0.2
    return linalg.toeplitz(row)


def random_factors(rng, p, q, r, diagonal=True, toeplitz=True):
    g = random_pd(rng, p)
    s = random_toeplitz_pd(rng, q) if toeplitz else random_pd(rng, q)
    d = np.diag(rng.uniform(0.5, 3.0, r)) if diagonal else random_pd(rng, r)
    return FactorSet(g, s, d)


def random_tensor(rng, p, q, r, n=1):
    return TrialTensor(rng.standard_normal((n, r, p, q)))


def loop_unfoldings(x):
    """X, Y, Z unfoldings of one sample built entry by entry from the index rules."""
    r, p, q = x.shape
    X = np.zeros((p, q * r))
    Y = np.zeros((q, p * r))
    Z = np.zeros((r, p * q))
    for d in range(r):
        for i in range(p):
            for j in range(q):
                X[i, q * d + j] = x[d, i, j]
                Y[j, p * d + i] = x[d, i, j]
                Z[d, p * j + i] = x[d, i, j]
    return X, Y, Z


def dense_vec(t):
    """Rows are vec(X_k) in the model's column-stacking order."""
    return t.to_serialized().reshape(t.n, -1)


# dense oracles built from loop unfoldings and explicit Kronecker inverses
def oracle_gamma(t, psi, delta):
    n, r, p, q = t.data.shape
    w = np.linalg.inv(np.kron(delta, psi))
    acc = sum(X @ w @ X.T for X, _, _ in map(loop_unfoldings, t.data))
    return acc / (n * q * r)


def oracle_delta(t, gamma, psi):
    n, r, p, q = t.data.shape
    w = np.linalg.inv(np.kron(psi, gamma))
    acc = sum(Z @ w @ Z.T for _, _, Z in map(loop_unfoldings, t.data))
    return acc / (n * p * q)


def oracle_psi(t, gamma, delta):
    n, r, p, q = t.data.shape
    w = np.linalg.inv(np.kron(delta, gamma))
    acc = sum(Y @ w @ Y.T for _, Y, _ in map(loop_unfoldings, t.data))
    return acc / (n * p * r)


def oracle_loglik(t, f):
    return stats.multivariate_normal(np.zeros(f.p * f.q * f.r), f.covariance()).logpdf(dense_vec(t)).sum()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
