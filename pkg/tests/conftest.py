import numpy as np
import pytest


def taylor_expm(M, terms=60):
    """Dense Taylor series with scaling and squaring; independent of scipy."""
    M = np.asarray(M, dtype=float)
    norm = np.abs(M).sum(axis=1).max() if M.size else 0.0
    s = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0.5 else 0
    X = M / 2.0**s
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ X / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def scan_root(f, lo, hi, n=200_001, refine=6):
    """Root of an increasing scalar function by repeated dense grid scans."""
    for _ in range(refine):
        xs = np.linspace(lo, hi, n)
        vals = np.array([f(x) for x in xs]) if n < 5000 else f(xs)
        k = int(np.argmax(vals >= 0))
        lo, hi = xs[max(k - 1, 0)], xs[k]
        n = 1001
    return 0.5 * (lo + hi)


def random_spd(rng, n, scale=1.0):
    X = rng.standard_normal((n, n))
    return scale * (X @ X.T / n + 0.1 * np.eye(n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
