import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dictanneal.errors import FormatError
from dictanneal.vecio import (
    GaussianMixture,
    check_ground_truth,
    gen_synthetic,
    read_bvecs,
    read_fvecs,
    read_ivecs,
    read_vectors,
    split_train_query,
    write_bvecs,
    write_fvecs,
    write_ivecs,
)


def test_empty_file(tmp_path):
    p = tmp_path / "empty.fvecs"
    p.write_bytes(b"")
    data = read_fvecs(p)
    assert data.shape == (0, 0)


def test_one_record(tmp_path):
    p = tmp_path / "one.fvecs"
    p.write_bytes(struct.pack("<i2f", 2, 1.0, 2.0))
    data = read_fvecs(p)
    assert data.shape == (1, 2)
    np.testing.assert_array_equal(data[0], [1.0, 2.0])


def test_ivecs_record(tmp_path):
    p = tmp_path / "gt.ivecs"
    p.write_bytes(struct.pack("<i3i", 3, 5, 2, 9))
    np.testing.assert_array_equal(read_ivecs(p), [[5, 2, 9]])


def test_bvecs_widening(tmp_path):
    p = tmp_path / "b.bvecs"
    p.write_bytes(struct.pack("<i", 2) + bytes([0, 255]))
    data = read_bvecs(p)
    assert data.dtype == np.float32
    np.testing.assert_array_equal(data, [[0.0, 255.0]])


def test_fvecs_roundtrip_random(tmp_path, rng):
    data = rng.standard_normal((10, 4)).astype(np.float32)
    p = tmp_path / "x.fvecs"
    write_fvecs(data, p)
    back = read_fvecs(p)
    assert back.tobytes() == data.tobytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 5)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=32)))
def test_fvecs_roundtrip_bit_exact(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("rt") / "x.fvecs"
    write_fvecs(data, p)
    assert read_fvecs(p).tobytes() == data.tobytes()


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 5))))
def test_bvecs_roundtrip(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("rt") / "x.bvecs"
    write_bvecs(data, p)
    np.testing.assert_array_equal(read_bvecs(p), data.astype(np.float32))


@settings(max_examples=30, deadline=None)
@given(arrays(np.int32, st.tuples(st.integers(1, 6), st.integers(1, 5))))
def test_ivecs_roundtrip(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("rt") / "x.ivecs"
    write_ivecs(data, p)
    assert read_ivecs(p).tobytes() == data.tobytes()


def test_truncated_record_reports_offset(tmp_path):
    p = tmp_path / "t.fvecs"
    raw = struct.pack("<i2f", 2, 1.0, 2.0) + struct.pack("<i", 2) + struct.pack("<f", 3.0)
    p.write_bytes(raw)
    with pytest.raises(FormatError) as exc:
        read_fvecs(p)
    assert exc.value.offset == 12
    assert "byte offset 12" in str(exc.value)


def test_dimension_mismatch(tmp_path):
    p = tmp_path / "m.fvecs"
    p.write_bytes(struct.pack("<i2f", 2, 1.0, 2.0) + struct.pack("<i3f", 3, 1.0, 2.0, 3.0))
    with pytest.raises(FormatError) as exc:
        read_fvecs(p)
    assert exc.value.offset == 12


@pytest.mark.parametrize("dim", [0, -3])
def test_nonpositive_dimension(tmp_path, dim):
    p = tmp_path / "z.fvecs"
    p.write_bytes(struct.pack("<i", dim) + b"\0" * 8)
    with pytest.raises(FormatError):
        read_fvecs(p)


def test_nonfinite_rejected(tmp_path):
    p = tmp_path / "nan.fvecs"
    p.write_bytes(struct.pack("<i2f", 2, 1.0, float("nan")))
    with pytest.raises(FormatError):
        read_fvecs(p)


def test_read_vectors_dispatch(tmp_path, rng):
    data = rng.integers(0, 256, (3, 4)).astype(np.uint8)
    write_bvecs(data, tmp_path / "a.bvecs")
    np.testing.assert_array_equal(read_vectors(tmp_path / "a.bvecs"), data)
    with pytest.raises(ValueError):
        read_vectors(tmp_path / "a.txt")


def test_gen_deterministic():
    a = gen_synthetic(100, 8, 4, 7)
    b = gen_synthetic(100, 8, 4, 7)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, gen_synthetic(100, 8, 4, 8))


@pytest.mark.parametrize("args", [(0, 8, 4, 1), (10, 0, 4, 1), (10, 8, 0, 1)])
def test_gen_invalid_sizes(args):
    with pytest.raises(ValueError):
        gen_synthetic(*args)


def test_gen_variance_matches_generator():
    n, d = 10000, 32
    data = gen_synthetic(n, d, 16, 1).astype(np.float64)
    gm = GaussianMixture.from_seed(d, 16, 1)
    var = gm.population_variance()
    # Standard error of a sample variance: sqrt((mu4 - var^2) / n), with the
    # fourth central moment estimated from the sample.
    centered = data - data.mean(axis=0)
    mu4 = (centered**4).mean(axis=0)
    se = np.sqrt((mu4 - var**2) / n)
    z = np.abs(data.var(axis=0) - var) / se
    assert np.all(z < 3.0 + 1.0), z.max()  # 32 dims: allow the max to stray a little past 3
    assert np.mean(z < 3.0) >= 0.9


def test_split_partitions():
    data = np.arange(200, dtype=np.float32).reshape(100, 2)
    train, base, query, (ti, bi, qi) = split_train_query(data, 30, 10, seed=3)
    assert len(ti) == 30 and len(qi) == 10 and len(bi) == 60
    assert not set(ti) & set(bi) and not set(ti) & set(qi) and not set(bi) & set(qi)
    np.testing.assert_array_equal(train, data[ti])
    again = split_train_query(data, 30, 10, seed=3)[3]
    for a, b in zip((ti, bi, qi), again):
        np.testing.assert_array_equal(a, b)


def test_split_overflow():
    with pytest.raises(ValueError):
        split_train_query(np.zeros((10, 2)), 8, 3, 0)


def test_check_ground_truth():
    check_ground_truth(np.array([[0, 1], [2, 3]]), 4)
    with pytest.raises(ValueError):
        check_ground_truth(np.array([[0, 4]]), 4)
    with pytest.raises(ValueError):
        check_ground_truth(np.array([[1, 1]]), 4)
