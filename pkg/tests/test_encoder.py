import numpy as np
import pytest

from conftest import random_codebook
from dictanneal.codebook import Codebook, build_cross_terms, reconstruct, reconstruct_all, sort_by_norm
from dictanneal.encoder import (
    EXHAUSTIVE_LIMIT,
    beam_encode,
    beam_encode_batch,
    encode,
    encode_dataset,
    exhaustive_encode,
    exhaustive_encode_batch,
    greedy_encode_batch,
    icm_encode,
    icm_encode_batch,
    pq_encode_batch,
)
from dictanneal.errors import ContractError
from dictanneal.trainers import train_pq


def sq_res(x, cb, codes):
    return ((np.asarray(x, np.float64) - reconstruct_all(cb, codes)) ** 2).sum(-1)


def brute_force(x, cb):
    """Independent oracle: enumerate every code with itertools-style nesting."""
    best, best_code = np.inf, None
    for code in np.ndindex(*(cb.k,) * cb.m):
        r = float(((x - reconstruct(cb, code)) ** 2).sum())
        if r < best:
            best, best_code = r, code
    return np.array(best_code), best


def test_beam_single_dictionary(rng):
    cb = random_codebook(rng, 1, 6, 4)
    x = rng.standard_normal((20, 4))
    for L in (1, 3, 10):
        codes, _ = beam_encode_batch(x, cb, L=L)
        expect = np.argmin(((x[:, None] - cb.elements[0][None]) ** 2).sum(-1), axis=1)
        np.testing.assert_array_equal(codes[:, 0], expect)


def test_beam_recurrence_matches_direct(rng):
    cb = random_codebook(rng, 3, 4, 8)
    x = rng.standard_normal(8)
    trace = []
    beam_encode_batch(x[None], cb, L=5, trace=trace)
    for m, (prefix, scores) in enumerate(trace):
        partial = cb.truncate(m + 1)
        direct = sq_res(x, partial, prefix[0])
        np.testing.assert_allclose(scores[0], direct, rtol=1e-4, atol=1e-9)
        # ordered by score, ties by prefix
        assert np.all(np.diff(scores[0]) >= 0)


@pytest.mark.parametrize("seed", range(20))
def test_full_beam_equals_exhaustive(seed):
    rng = np.random.default_rng(seed)
    cb = random_codebook(rng, 3, 4, 8)
    x = rng.standard_normal((5, 8))
    codes, _ = beam_encode_batch(x, cb, L=16)
    for i in range(5):
        _, best = brute_force(x[i], cb)
        assert sq_res(x[i], cb, codes[i]) == pytest.approx(best, rel=1e-9)


def test_beam_monotone_in_L(rng):
    # A wider beam can occasionally lose a vector that a narrower one found,
    # so monotonicity is asserted on the mean and as a rare-violation rate.
    cb = random_codebook(rng, 4, 6, 8)
    x = rng.standard_normal((2000, 8))
    res = [sq_res(x, cb, beam_encode_batch(x, cb, L=L)[0]) for L in (1, 2, 4, 8, 6**3)]
    for a, b in zip(res, res[1:]):
        assert b.mean() <= a.mean()
        assert np.mean(b > a + 1e-9) < 0.05


def test_wider_beam_can_lose_a_vector():
    el = np.array([[[-1.5, -1.0], [1.5, -0.5]],
                   [[0.5, 1.0], [0.0, 1.5]],
                   [[-0.5, -0.5], [-1.0, 0.0]]])
    cb = Codebook(el)
    assert cb.is_norm_sorted
    x = np.zeros(2)
    # L=2 keeps (0, 0) at stage 2 and crowds out (1, 1), the only prefix
    # that L=1 follows to the better final code.
    assert sq_res(x, cb, beam_encode(x, cb, L=1)) == pytest.approx(1.25)
    assert sq_res(x, cb, beam_encode(x, cb, L=2)) == pytest.approx(2.5)
    assert sq_res(x, cb, exhaustive_encode(x, cb)) <= 1.25


def test_beam_reported_error(rng):
    cb = random_codebook(rng, 3, 5, 6)
    x = rng.standard_normal((10, 6))
    codes, err = beam_encode_batch(x, cb, L=4)
    np.testing.assert_allclose(err, sq_res(x, cb, codes), rtol=1e-6, atol=1e-9)
    np.testing.assert_array_equal(beam_encode(x[0], cb, L=4), codes[0])


def test_beam_contract_errors(rng):
    cb = random_codebook(rng, 3, 4, 4, decay=2.0, sort=False)
    assert not cb.is_norm_sorted
    with pytest.raises(ContractError):
        beam_encode_batch(np.zeros((1, 4)), cb)
    with pytest.raises(ValueError):
        beam_encode_batch(np.zeros((1, 4)), sort_by_norm(cb)[0], L=0)


def test_icm_properties(rng):
    cb = random_codebook(rng, 3, 5, 6)
    x = rng.standard_normal((200, 6))
    greedy = greedy_encode_batch(x, cb)
    icm = icm_encode_batch(x, cb)
    ex = exhaustive_encode_batch(x, cb)
    assert np.all(sq_res(x, cb, icm) <= sq_res(x, cb, greedy) + 1e-12)
    assert np.all(sq_res(x, cb, icm) >= sq_res(x, cb, ex) - 1e-9)


def test_icm_single_dictionary(rng):
    cb = random_codebook(rng, 1, 5, 3)
    x = rng.standard_normal(3)
    assert icm_encode(x, cb, rounds=1)[0] == np.argmin(((cb.elements[0] - x) ** 2).sum(1))
    with pytest.raises(ValueError):
        icm_encode(x, cb, rounds=0)


def test_icm_every_init_is_local_optimum(rng):
    cb = random_codebook(rng, 2, 4, 3)
    x = rng.standard_normal(3)
    _, best = brute_force(x, cb)
    for init in np.ndindex(4, 4):
        code = icm_encode_batch(x[None], cb, rounds=50, init=[init])[0]
        r = sq_res(x, cb, code)
        assert r >= best - 1e-12
        assert r <= sq_res(x, cb, init) + 1e-12
        for m in range(2):
            for k in range(4):
                alt = code.copy()
                alt[m] = k
                assert sq_res(x, cb, alt) >= r - 1e-12


def test_exhaustive_hand_instance():
    el = np.array([[[0, 0], [4, 0]], [[0, 0], [0, 4]]], dtype=float)
    cb = Codebook(el)
    np.testing.assert_array_equal(exhaustive_encode([4.0, 4.0], cb), [1, 1])


def test_exhaustive_representable(rng):
    cb = random_codebook(rng, 3, 4, 5)
    code = np.array([2, 0, 3])
    x = reconstruct(cb, code)
    found = exhaustive_encode(x, cb)
    assert sq_res(x, cb, found) == pytest.approx(0.0, abs=1e-10)


def test_exhaustive_guard():
    cb = Codebook(np.zeros((3, 128, 2)))
    assert 128**3 > EXHAUSTIVE_LIMIT
    with pytest.raises(ValueError, match="exceeds"):
        exhaustive_encode(np.zeros(2), cb)


def test_exhaustive_ties_lexicographic():
    cb = Codebook(np.zeros((2, 3, 2)))
    np.testing.assert_array_equal(exhaustive_encode([1.0, 1.0], cb), [0, 0])


def test_pq_matches_exhaustive(rng):
    train = rng.standard_normal((300, 6)).astype(np.float32)
    cb = train_pq(train, 3, 4, seed=1)
    x = rng.standard_normal((50, 6))
    pq = pq_encode_batch(x, cb)
    ex = exhaustive_encode_batch(x, cb)
    np.testing.assert_allclose(sq_res(x, cb, pq), sq_res(x, cb, ex), rtol=1e-9)


def test_pq_requires_product_codebook(rng):
    with pytest.raises(ValueError):
        pq_encode_batch(np.zeros((1, 4)), random_codebook(rng, 2, 3, 4))


@pytest.mark.parametrize("method", ["beam", "greedy", "icm", "pq"])
def test_encode_independent_of_threads(rng, method):
    data = rng.standard_normal((700, 8)).astype(np.float32)
    cb = train_pq(data, 2, 8) if method == "pq" else random_codebook(rng, 3, 8, 8)
    a = encode(data, cb, method, chunk=64, n_jobs=1)
    b = encode(data, cb, method, chunk=64, n_jobs=4)
    c = encode(data, cb, method, chunk=4096, n_jobs=1)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)


def test_encode_dataset_cross_terms(rng):
    cb = random_codebook(rng, 3, 4, 5)
    data = rng.standard_normal((40, 5))
    db = encode_dataset(data, cb, "beam", L=4)
    recon = reconstruct_all(cb, db.codes)
    own = sum((cb.elements[m].astype(np.float64)[db.codes[:, m]] ** 2).sum(1) for m in range(3))
    np.testing.assert_allclose(db.cross_terms, (recon**2).sum(1) - own, rtol=1e-4, atol=1e-5)
    with pytest.raises(ValueError):
        encode(data, cb, "nope")
