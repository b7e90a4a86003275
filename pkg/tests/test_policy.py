import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lengthbias.policy import (
    EOS,
    PolicyParams,
    Query,
    grad_token_log_prob,
    init_params,
    load_params,
    sample_response,
    save_params,
    sequence_log_prob,
    snapshot,
    token_log_prob,
)

Q = Query(id=0, prompt_tokens=(1,))


def unigram(logits):
    logits = np.asarray(logits, dtype=float)
    return PolicyParams(logits[None, :], len(logits), context_order=0)


def test_uniform_log_prob():
    p = init_params(4, context_order=1)
    for nxt in range(4):
        assert token_log_prob(p, [2], nxt) == pytest.approx(math.log(0.25), abs=1e-15)


def test_log_prob_matches_direct_softmax():
    p = unigram([1.0, 0.0, 0.0, 0.0])
    expected = math.log(math.e / (math.e + 3))
    assert token_log_prob(p, [], 0) == pytest.approx(expected, abs=1e-15)


def test_temperature_scales_logits():
    p = unigram([1.0, 0.0])
    expected = math.log(math.exp(0.5) / (math.exp(0.5) + 1))
    assert token_log_prob(p, [], 0, temperature=2.0) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("temperature", [0.5, 1.0, 3.0])
def test_rows_normalise(rng, temperature):
    p = init_params(6, context_order=2, n_classes=3, scale=3.0, rng_seed=1)
    for _ in range(20):
        ctx = list(rng.integers(0, 6, size=rng.integers(0, 4)))
        cls = int(rng.integers(3))
        total = sum(math.exp(token_log_prob(p, ctx, v, temperature, cls)) for v in range(6))
        assert abs(total - 1.0) < 1e-12


def test_invalid_token_rejected():
    p = init_params(4)
    with pytest.raises(ValueError):
        token_log_prob(p, [], 4)
    with pytest.raises(ValueError):
        token_log_prob(p, [7], 1)


def test_params_validation():
    with pytest.raises(ValueError):
        PolicyParams(np.zeros((6, 4)), 4, 1)
    with pytest.raises(ValueError):
        PolicyParams(np.full((5, 4), np.nan), 4, 1)
    with pytest.raises(ValueError):
        init_params(1)


def test_sequence_log_prob_uniform():
    p = init_params(4)
    assert sequence_log_prob(p, Q, [1, 2, EOS]) == pytest.approx(3 * math.log(0.25), abs=1e-14)


def test_sequence_log_prob_single_token():
    p = init_params(5, scale=1.0, rng_seed=3)
    assert sequence_log_prob(p, Q, [3]) == token_log_prob(p, [], 3)


def test_sequence_log_prob_decomposes(rng):
    p = init_params(6, context_order=2, scale=1.5, rng_seed=4)
    resp = [int(t) for t in rng.integers(1, 6, size=4)] + [EOS]
    manual = sum(token_log_prob(p, resp[:t], resp[t]) for t in range(5))
    assert abs(sequence_log_prob(p, Q, resp) - manual) < 1e-14


def test_sequence_log_prob_errors():
    p = init_params(4)
    with pytest.raises(ValueError):
        sequence_log_prob(p, Q, [])
    with pytest.raises(ValueError):
        sequence_log_prob(p, Q, [1, EOS, 2])


def test_sequence_log_prob_non_increasing_in_length():
    p = init_params(5, scale=1.0, rng_seed=8)
    resp = [1, 2, 3, 4, 2, 1]
    vals = [sequence_log_prob(p, Q, resp[:n]) for n in range(1, len(resp) + 1)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_sample_forced_eos():
    p = unigram([50.0, 0.0, 0.0])
    tokens, logps = sample_response(p, Q, max_len=10, rng_seed=0)
    assert tokens == [EOS]
    assert logps.shape == (1,)


def test_sample_deterministic():
    p = init_params(6, context_order=1, scale=1.0, rng_seed=5)
    a = sample_response(p, Q, 30, 1.0, 0.9, rng_seed=42)
    b = sample_response(p, Q, 30, 1.0, 0.9, rng_seed=42)
    assert a[0] == b[0]
    assert np.array_equal(a[1], b[1])


def test_sample_stops_at_max_len():
    p = unigram([-50.0, 0.0, 0.0])
    tokens, _ = sample_response(p, Q, max_len=7, rng_seed=1)
    assert len(tokens) == 7 and EOS not in tokens


def test_sample_first_token_frequency():
    # P(token 0) = e / (e + 1); 4 standard errors at n=1e5 is ~0.0056
    p = unigram([1.0, 0.0])
    gen = np.random.default_rng(2024)
    n = 100_000
    hits = sum(sample_response(p, Q, 1, 1.0, 1.0, gen)[0][0] == 0 for _ in range(n))
    assert abs(hits / n - math.e / (math.e + 1)) < 0.01


def test_sample_logprobs_are_full_softmax():
    p = unigram([2.0, 1.0, 0.0, -1.0])
    tokens, logps = sample_response(p, Q, 5, temperature=1.0, top_p=0.5, rng_seed=3)
    for t, lp in zip(tokens, logps):
        assert lp == token_log_prob(p, [], t)


def test_top_p_restricts_support():
    p = unigram([-30.0, 2.0, 1.9, 0.0, 0.0])
    gen = np.random.default_rng(0)
    seen = {sample_response(p, Q, 1, 1.0, 0.5, gen)[0][0] for _ in range(300)}
    assert seen <= {1, 2}
    # nucleus of the single most likely token
    seen = {sample_response(p, Q, 1, 1.0, 1e-9, gen)[0][0] for _ in range(50)}
    assert seen == {1}


def test_sample_argument_checks():
    p = init_params(3)
    with pytest.raises(ValueError):
        sample_response(p, Q, 0)
    with pytest.raises(ValueError):
        sample_response(p, Q, 3, top_p=0.0)
    with pytest.raises(ValueError):
        sample_response(p, Q, 3, temperature=0.0)


def test_grad_uniform():
    p = init_params(4)
    g = grad_token_log_prob(p, [1], 2)
    assert np.allclose(g.values, [-0.25, -0.25, 0.75, -0.25], atol=1e-15)
    dense = g.to_dense(p.shape)
    assert np.count_nonzero(np.abs(dense).sum(axis=1)) == 1


def test_grad_saturated():
    p = unigram([0.0, 60.0, 0.0])
    g = grad_token_log_prob(p, [], 1)
    assert np.max(np.abs(g.values)) < 1e-20


def _fd_token(p, ctx, nxt, cls, h=1e-6):
    grad = np.zeros(p.shape)
    for idx in np.ndindex(p.shape):
        hi = p.logits.copy()
        lo = p.logits.copy()
        hi[idx] += h
        lo[idx] -= h
        fp = token_log_prob(PolicyParams(hi, p.vocab_size, p.context_order, p.n_classes), ctx, nxt, 1.0, cls)
        fm = token_log_prob(PolicyParams(lo, p.vocab_size, p.context_order, p.n_classes), ctx, nxt, 1.0, cls)
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def test_grad_matches_finite_differences(rng):
    worst = 0.0
    for trial in range(100):
        p = init_params(4, context_order=1, n_classes=2, scale=2.0, rng_seed=trial)
        ctx = [int(t) for t in rng.integers(0, 4, size=rng.integers(0, 3))]
        nxt, cls = int(rng.integers(4)), int(rng.integers(2))
        g = grad_token_log_prob(p, ctx, nxt, query_class=cls).to_dense(p.shape)
        fd = _fd_token(p, ctx, nxt, cls)
        worst = max(worst, np.max(np.abs(g - fd)) / np.max(np.abs(fd)))
        assert abs(g.sum()) < 1e-12
    assert worst < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 5))
def test_grad_row_sums_to_zero(seed, nxt):
    p = init_params(6, scale=3.0, rng_seed=seed)
    assert abs(grad_token_log_prob(p, [seed % 6], nxt).values.sum()) < 1e-12


def test_snapshot_is_independent():
    p = init_params(5, scale=1.0, rng_seed=9)
    resp = [1, 3, EOS]
    before = sequence_log_prob(p, Q, resp)
    snap = snapshot(p)
    assert np.array_equal(snap.logits, p.logits)
    p.logits += np.random.default_rng(0).normal(size=p.shape)
    assert sequence_log_prob(snap, Q, resp) == before
    assert sequence_log_prob(p, Q, resp) != before
    with pytest.raises(ValueError):
        snap.logits[0, 0] = 1.0


def test_snapshot_ratios_are_one():
    p = init_params(5, context_order=2, scale=1.0, rng_seed=10)
    snap = snapshot(p)
    for t in range(1, 5):
        assert math.exp(token_log_prob(p, [t], 2) - token_log_prob(snap, [t], 2)) == 1.0


def test_save_load_round_trip(tmp_path):
    p = init_params(7, context_order=2, n_classes=3, scale=2.0, rng_seed=11)
    path = tmp_path / "policy.txt"
    save_params(p, path)
    q = load_params(path)
    assert (q.vocab_size, q.context_order, q.n_classes) == (7, 2, 3)
    assert np.array_equal(q.logits, p.logits)
    assert path.read_text().startswith("# lengthbias-policy v1")


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.txt"
    path.write_text("1 2 3\n")
    with pytest.raises(ValueError):
        load_params(path)
