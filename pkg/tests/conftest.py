import numpy as np
import pytest

from dictanneal.codebook import Codebook, sort_by_norm


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_codebook(rng, M, K, d, decay=0.6, sort=True):
    """Random additive codebook with geometrically shrinking dictionaries."""
    el = np.stack([rng.standard_normal((K, d)) * decay**m for m in range(M)])
    cb = Codebook(el)
    return sort_by_norm(cb)[0] if sort else cb


@pytest.fixture
def tiny_codebook(rng):
    return random_codebook(rng, 3, 4, 8)


def planted_two_scale(n, d, K, seed, p=0.05, R=20.0, big=20.0, line=4.0, noise=0.05):
    """Data at two well-separated scales with 1-d fine structure.

    Coarse: K random centers of scale ``big``.  Fine: a position along one
    shared line of half-length ``line``, plus, for a fraction ``p`` of points,
    an outlier offset of length ``R`` in a random direction.  A second RVQ
    stage fit by k-means spends most centroids on the sparse outliers and
    collapses the dense line onto a few codes.
    """
    r = np.random.default_rng(seed)
    centers = r.standard_normal((K, d)) * big
    u = r.standard_normal(d)
    u /= np.linalg.norm(u)
    a = r.integers(K, size=n)
    t = r.uniform(-line, line, size=n)
    out = r.random(n) < p
    dirs = r.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    fine = t[:, None] * u + out[:, None] * R * dirs
    return (centers[a] + fine + noise * r.standard_normal((n, d))).astype(np.float32)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
