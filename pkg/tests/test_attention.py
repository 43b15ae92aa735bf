import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from targetdrop.attention import AttentionParams, attention_map, init_attention, load_params, save_params
from oracles import brute_attention


def test_init_is_seeded_and_shaped():
    a, b = init_attention(64, 16, seed=5), init_attention(64, 16, seed=5)
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)
    assert a.w1.shape == (4, 64) and a.w2.shape == (64, 4)
    assert not np.array_equal(a.w1, init_attention(64, 16, seed=6).w1)
    assert a.trainable is False


def test_init_bounds():
    p = init_attention(64, 16, seed=0)
    limit = np.sqrt(6.0 / (64 + 4))
    assert np.abs(p.w1).max() <= limit and np.abs(p.w2).max() <= limit


def test_invalid_reduction_ratio():
    with pytest.raises(ValueError, match="invalid reduction ratio"):
        init_attention(8, 3)


def test_zero_weights_or_zero_input_give_half():
    p = init_attention(8, 2, seed=1)
    zero_w1 = AttentionParams(np.zeros_like(p.w1), p.w2, 2)
    zero_w2 = AttentionParams(p.w1, np.zeros_like(p.w2), 2)
    u = np.random.default_rng(0).normal(size=(4, 4, 8))
    assert np.array_equal(attention_map(u, zero_w1), np.full(8, 0.5))
    assert np.array_equal(attention_map(u, zero_w2), np.full(8, 0.5))
    assert np.array_equal(attention_map(np.zeros((4, 4, 8)), p), np.full(8, 0.5))


def test_hand_evaluated_gate():
    p = AttentionParams(np.eye(2), np.eye(2), 1)
    u = np.zeros((1, 1, 2))
    u[0, 0] = [1.0, -1.0]
    m = attention_map(u, p)
    assert m[0] == pytest.approx(1 / (1 + np.exp(-1)), rel=1e-15)  # 0.7311
    assert m[1] == 0.5


def test_matches_loop_reference():
    rng = np.random.default_rng(2)
    u = rng.normal(size=(3, 5, 8))
    p = init_attention(8, 4, seed=3)
    assert np.allclose(attention_map(u, p), brute_attention(u, p.w1, p.w2), rtol=0, atol=1e-14)


def test_channel_mismatch():
    with pytest.raises(ValueError, match="channel mismatch"):
        attention_map(np.zeros((2, 2, 4)), init_attention(8, 2))


@settings(max_examples=50)
@given(st.integers(0, 10_000), st.sampled_from([(4, 1), (4, 2), (8, 4), (6, 3)]))
def test_range_and_permutation_equivariance(seed, cr):
    c, r = cr
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(3, 3, c)) * 3
    p = init_attention(c, r, seed)
    m = attention_map(u, p)
    assert ((m > 0) & (m < 1)).all()
    perm = rng.permutation(c)
    q = AttentionParams(p.w1[:, perm], p.w2[perm, :], r)
    assert np.allclose(attention_map(u[:, :, perm], q), m[perm], rtol=0, atol=1e-15)
    assert np.array_equal(attention_map(u, p), m)


def test_param_file_round_trip(tmp_path):
    p = init_attention(32, 16, seed=99)
    path = tmp_path / "gate.bin"
    save_params(p, path)
    raw = path.read_bytes()
    assert raw[:8] == b"TDATTN01" and len(raw) == 24 + 8 * 2 * 64
    q = load_params(path)
    assert q.w1.tobytes() == p.w1.tobytes() and q.w2.tobytes() == p.w2.tobytes()
    assert (q.channels, q.reduction_ratio, q.seed) == (32, 16, 99)
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_params(path)
