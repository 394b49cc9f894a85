import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pypelab.oracle import attention_oracle, rotary_matrix, softmax_oracle
from pypelab.rope import RotaryConfig, attention_row, attention_score, masked_softmax, rotary_frequencies, rotate


def test_frequencies():
    assert rotary_frequencies(RotaryConfig(2)).tolist() == [1.0]
    np.testing.assert_allclose(rotary_frequencies(RotaryConfig(4)), [1.0, 0.01], rtol=1e-15)
    expected = [10000 ** (-e) for e in (0, 0.25, 0.5, 0.75)]
    np.testing.assert_allclose(rotary_frequencies(RotaryConfig(8)), expected, rtol=1e-15)
    f = rotary_frequencies(RotaryConfig(64))
    assert f[0] == 1.0 and np.all(np.diff(f) < 0)


@pytest.mark.parametrize("dim, base", [(0, 10000.0), (3, 10000.0), (4, 1.0), (4, 0.5)])
def test_config_validation(dim, base):
    with pytest.raises(ValueError):
        RotaryConfig(dim, base)


def test_rotate_examples():
    cfg = RotaryConfig(2)
    np.testing.assert_allclose(rotate([1.0, 0.0], 1, cfg), [math.cos(1), math.sin(1)], rtol=1e-15)
    np.testing.assert_allclose(rotate([0.0, 1.0], 1, cfg), [-math.sin(1), math.cos(1)], rtol=1e-15)
    v = np.arange(8.0)
    assert np.array_equal(rotate(v, 0, RotaryConfig(8)), v)


def test_rotate_rejects_bad_lengths():
    with pytest.raises(ValueError):
        rotate(np.ones(3), 1, RotaryConfig(4))
    with pytest.raises(ValueError):
        rotate(np.ones(6), 1, RotaryConfig(4))


def test_rotate_matches_dense_matrix(rng):
    for D in (2, 8, 32):
        v = rng.standard_normal(D)
        np.testing.assert_allclose(rotate(v, 17, RotaryConfig(D)), rotary_matrix(17, D) @ v, rtol=1e-12, atol=1e-14)


def test_rotate_batched_positions(rng):
    cfg = RotaryConfig(8)
    vs = rng.standard_normal((5, 8))
    ms = np.array([0, 3, -2, 100, 7])
    out = rotate(vs, ms, cfg)
    for v, m, o in zip(vs, ms, out):
        np.testing.assert_allclose(o, rotate(v, m, cfg), rtol=1e-14)


def test_score_examples():
    cfg = RotaryConfig(2)
    assert attention_score([1, 0], [1, 0], 5, 5, cfg) == pytest.approx(1.0, rel=1e-15)
    assert attention_score([1, 0], [1, 0], 1, 0, cfg) == pytest.approx(math.cos(1), rel=1e-12)
    with pytest.raises(ValueError):
        attention_score([1, 0], [1, 0, 0, 0], 1, 0, cfg)


def test_score_shift_example(rng):
    cfg = RotaryConfig(16)
    q, k = rng.standard_normal(16), rng.standard_normal(16)
    a = attention_score(q, k, 7, 3, cfg)
    b = attention_score(q, k, 107, 103, cfg)
    assert b == pytest.approx(a, rel=1e-9)
    assert a == pytest.approx(attention_oracle(q, k, 7, 3), rel=1e-9)


def test_equal_positions_reduce_to_dot(rng):
    cfg = RotaryConfig(32)
    q, k = rng.standard_normal(32), rng.standard_normal(32)
    for m in (0, 1, 55, 4096):
        assert attention_score(q, k, m, m, cfg) == pytest.approx(q @ k, rel=1e-10)
        assert attention_oracle(q, k, m, m) == pytest.approx(q @ k, rel=1e-10)


def test_attention_row_examples(rng):
    cfg = RotaryConfig(4)
    q = rng.standard_normal(4)
    assert attention_row(q, rng.standard_normal((1, 4)), 3, [1], [True], cfg, 0.5).tolist() == [1.0]
    k = rng.standard_normal(4)
    np.testing.assert_allclose(attention_row(q, np.stack([k, k]), 3, [2, 2], [True, True], cfg, 0.5), [0.5, 0.5])


def test_attention_row_matches_naive_softmax(rng):
    cfg = RotaryConfig(8)
    for _ in range(50):
        q, keys = rng.standard_normal(8), rng.standard_normal((4, 8))
        kpos = rng.integers(0, 20, 4)
        mask = np.zeros(4, bool)
        mask[rng.choice(4, 2, replace=False)] = True
        got = attention_row(q, keys, 21, kpos, mask, cfg, 1 / math.sqrt(8))
        scores = [attention_oracle(q, k, 21, int(p)) / math.sqrt(8) for k, p in zip(keys, kpos)]
        np.testing.assert_allclose(got, softmax_oracle(scores, mask), rtol=1e-9, atol=1e-15)
        assert got[~mask].tolist() == [0.0, 0.0]


def test_attention_row_errors():
    cfg = RotaryConfig(2)
    with pytest.raises(ValueError):
        attention_row([1, 0], [[1, 0], [0, 1]], 0, [0, 0], [False, False], cfg, 1.0)
    with pytest.raises(ValueError):
        attention_row([1, 0], [[1, 0], [0, 1]], 0, [0], [True, True], cfg, 1.0)


def test_masked_softmax_stable_for_large_scores():
    p = masked_softmax(np.array([1000.0, 999.0, 5000.0]), np.array([True, True, False]))
    assert p[2] == 0.0 and p.sum() == pytest.approx(1.0)


vec_dims = st.sampled_from([2, 4, 8, 64])


@given(D=vec_dims, m=st.integers(-10**4, 10**4), seed=st.integers(0, 2**32 - 1))
def test_norm_preservation(D, m, seed):
    v = np.random.default_rng(seed).standard_normal(D)
    assert np.linalg.norm(rotate(v, m, RotaryConfig(D))) == pytest.approx(np.linalg.norm(v), rel=1e-12)


@given(D=vec_dims, a=st.integers(-5000, 5000), b=st.integers(-5000, 5000), seed=st.integers(0, 2**32 - 1))
def test_composition(D, a, b, seed):
    cfg = RotaryConfig(D)
    v = np.random.default_rng(seed).standard_normal(D)
    np.testing.assert_allclose(rotate(rotate(v, a, cfg), b, cfg), rotate(v, a + b, cfg), rtol=1e-9, atol=1e-9 * np.linalg.norm(v))


@given(D=vec_dims, m=st.integers(-1000, 1000), n=st.integers(-1000, 1000), s=st.integers(-10**4, 10**4),
       seed=st.integers(0, 2**32 - 1))
def test_shift_invariance(D, m, n, s, seed):
    r = np.random.default_rng(seed)
    q, k = r.standard_normal(D), r.standard_normal(D)
    cfg = RotaryConfig(D)
    a, b = attention_score(q, k, m, n, cfg), attention_score(q, k, m + s, n + s, cfg)
    assert abs(a - b) <= 1e-9 * max(abs(a), 1e-3 * np.linalg.norm(q) * np.linalg.norm(k))


def test_long_term_decay(rng):
    cfg = RotaryConfig(64)
    qs = rng.standard_normal((1000, 64))
    qs /= np.linalg.norm(qs, axis=1, keepdims=True)
    means = [np.mean([abs(attention_score(q, q, m, 0, cfg)) for q in qs]) for m in (0, 16, 64, 256, 1024)]
    assert all(b <= a for a, b in zip(means, means[1:])), means
