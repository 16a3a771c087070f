import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from decadam.compression import (
    COMPRESSOR_KINDS,
    CompressorSpec,
    compress,
    compress_repeated,
    contraction_ratio,
    payload_bits,
    sign_delta,
    verify_contraction,
)


def test_scaled_sign_exact_on_equal_magnitudes():
    q, bits = compress(CompressorSpec("scaled_sign"), np.ones(4))
    assert np.array_equal(q, np.ones(4))
    assert bits == 4 + 32
    assert sign_delta(np.ones(4)) == 1.0


def test_scaled_sign_zero_maps_to_plus():
    x = np.array([2.0, 0.0])
    q, _ = compress(CompressorSpec("scaled_sign"), x)
    assert np.array_equal(q, [1.0, 1.0])
    r = x - q
    assert r @ r == 2.0
    assert contraction_ratio(x, q) == 0.5
    # ||x||_1^2 / (d ||x||^2) = 4 / 8
    assert sign_delta(x) == 0.5
    assert contraction_ratio(x, q) == 1 - sign_delta(x)


def test_top_k_example():
    x = np.array([3.0, 1.0])
    spec = CompressorSpec("top_k", 1)
    q, bits = compress(spec, x)
    assert np.array_equal(q, [3.0, 0.0])
    assert contraction_ratio(x, q) == pytest.approx(0.1)
    assert 0.1 <= 1 - spec.guaranteed_delta(2)
    assert bits == 1 * (32 + 1)


def test_payload_bits():
    d = 1000
    assert payload_bits(CompressorSpec("identity"), d) == 32 * d
    assert payload_bits(CompressorSpec("scaled_sign"), d) == d + 32
    assert payload_bits(CompressorSpec("top_k", 10), d) == 10 * (32 + math.ceil(math.log2(d)))
    assert payload_bits(CompressorSpec("random_k", 10), d) == 10 * 32 + 32
    # sign payload is about 1/32 of full precision for large d
    assert payload_bits(CompressorSpec("scaled_sign"), d) / payload_bits(CompressorSpec("identity"), d) < (d + 32) / (32 * d) + 1e-15


def test_guaranteed_deltas():
    assert CompressorSpec("identity").guaranteed_delta(7) == 1.0
    assert CompressorSpec("scaled_sign").guaranteed_delta(8) == 1 / 8
    assert CompressorSpec("top_k", 3).guaranteed_delta(12) == 0.25
    assert CompressorSpec("random_k", 2).guaranteed_delta(8) == 0.25
    assert not CompressorSpec("random_k", 2).deterministic
    assert CompressorSpec("top_k", 2).deterministic


def test_invalid_arguments():
    with pytest.raises(ValueError):
        CompressorSpec("top_k")
    with pytest.raises(ValueError):
        CompressorSpec("top_k", 0)
    with pytest.raises(ValueError):
        compress(CompressorSpec("top_k", 5), np.ones(3))
    with pytest.raises(ValueError):
        compress(CompressorSpec("scaled_sign"), np.array([]))
    with pytest.raises(ValueError):
        CompressorSpec("quantize")


@pytest.mark.parametrize("spec", [CompressorSpec(k) if k in ("identity", "scaled_sign") else CompressorSpec(k, 2) for k in COMPRESSOR_KINDS])
def test_zero_maps_to_zero(spec):
    q, _ = compress(spec, np.zeros(5), np.random.default_rng(0))
    assert np.array_equal(q, np.zeros(5))


@pytest.mark.parametrize("spec", [CompressorSpec("scaled_sign"), CompressorSpec("top_k", 3), CompressorSpec("random_k", 3)])
def test_deterministic_given_seed(spec, rng):
    x = rng.standard_normal(9)
    a, _ = compress(spec, x, np.random.default_rng(7))
    b, _ = compress(spec, x, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_compress_repeated_matches_sequential_calls(rng):
    spec = CompressorSpec("random_k", 3)
    x = rng.standard_normal(10)
    batch = compress_repeated(spec, x, np.random.default_rng(3), 50)
    r = np.random.default_rng(3)
    seq = np.stack([compress(spec, x, r)[0] for _ in range(50)])
    assert np.array_equal(batch, seq)


def test_random_k_keeps_k_unscaled_coordinates(rng):
    x = rng.standard_normal(12)
    q, _ = compress(CompressorSpec("random_k", 4), x, rng)
    kept = q != 0
    assert kept.sum() == 4
    assert np.array_equal(q[kept], x[kept])


def test_random_k_expected_residual_monte_carlo(rng):
    # E||x - Q(x)||^2 = (1 - k/d) ||x||^2 for uniform k-subsets without rescaling
    x = rng.standard_normal(8)
    qs = compress_repeated(CompressorSpec("random_k", 2), x, rng, 20000)
    ratios = ((x - qs) ** 2).sum(axis=1) / (x @ x)
    se = ratios.std(ddof=1) / math.sqrt(ratios.size)
    assert abs(ratios.mean() - 0.75) <= 4 * se


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(x=arrays(np.float64, st.integers(1, 40), elements=finite), k=st.integers(1, 40))
def test_deterministic_contraction_property(x, k):
    sq = x @ x
    # squared norms that underflow carry no information about the ratio
    assume(sq > 1e-200 or not x.any())
    for spec in (CompressorSpec("identity"), CompressorSpec("scaled_sign"), CompressorSpec("top_k", min(k, x.size))):
        q, _ = compress(spec, x)
        if sq == 0:
            assert np.array_equal(q, 0 * x)
            continue
        r = x - q
        assert r @ r <= (1 - spec.guaranteed_delta(x.size)) * sq * (1 + 1e-12) + 1e-300


def test_verify_contraction_identity_and_full_topk(rng):
    rep = verify_contraction(CompressorSpec("identity"), 200, 6, rng)
    assert rep.passed and rep.max_ratio == 0.0
    rep = verify_contraction(CompressorSpec("top_k", 10), 200, 10, rng)
    assert rep.passed and rep.max_ratio == 0.0


def test_verify_contraction_random_k(rng):
    rep = verify_contraction(CompressorSpec("random_k", 2), 500, 8, rng, redraws=1000)
    assert rep.passed
    assert abs(rep.mean_ratio - 0.75) < 0.01
    assert rep.standard_error > 0


def test_verify_contraction_reports_violations(rng, monkeypatch):
    import decadam.compression as comp

    real = comp.compress

    def broken(spec, x, rng=None):
        q, bits = real(spec, x, rng)
        return -q, bits

    monkeypatch.setattr(comp, "compress", broken)
    rep = comp.verify_contraction(CompressorSpec("scaled_sign"), 30, 5, rng)
    assert not rep.passed
    assert len(rep.violations) == 30
