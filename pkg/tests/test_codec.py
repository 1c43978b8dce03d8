import io
import math

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from pilotnn.codec import (
    NearestNeighborDecoder,
    channel_apply,
    generate_codebook,
    nn_decode,
    simulate_block_errors,
    slot_metrics,
    transmit_frame,
    truncated_mass,
    truncated_normalizer,
    write_block_errors,
)
from pilotnn.estimator import build_schedule
from pilotnn.fading import FadingPath, complex_normal, synthesize
from pilotnn.spectrum import PsdModel

RECT_EIGHTH = PsdModel(1 / 8)
# 1 - exp(-1): probability that a standard complex Gaussian has modulus <= 1.
UNIT_DISC_MASS = 0.6321205588285577


def coherent_log_likelihood(y, h, x, snr):
    """Complex Gaussian log density of y given the true channel, by explicit loops."""
    n_r, n = y.shape
    n_t = x.shape[0]
    total = 0.0
    for k in range(n):
        for r in range(n_r):
            mean = sum(math.sqrt(snr / n_t) * h[r, t, k] * x[t, k] for t in range(n_t))
            total += -abs(y[r, k] - mean) ** 2 - math.log(math.pi)
    return total


@pytest.mark.parametrize("n_t", [1, 2, 3])
def test_gaussian_codebook_power(n_t):
    book = generate_codebook(200, 100, n_t, seed=n_t)
    per_symbol = np.sum(np.abs(book.symbols) ** 2, axis=1).ravel()
    se = per_symbol.std(ddof=1) / math.sqrt(per_symbol.size)
    assert abs(per_symbol.mean() - n_t) <= 3 * se
    assert book.symbols.shape == (200, n_t, 100)
    assert book.rate == pytest.approx(math.log(200) / 100)


def test_truncated_codebook_support_and_constant():
    book = generate_codebook(300, 200, 2, law="truncated_gaussian", seed=4)
    assert np.abs(book.symbols).max() <= 1.0
    assert truncated_mass(1) == pytest.approx(UNIT_DISC_MASS, abs=1e-14)
    assert truncated_mass(2) == pytest.approx(UNIT_DISC_MASS**2, abs=1e-14)
    assert book.density_bound == pytest.approx(truncated_normalizer(2))
    assert generate_codebook(2, 2, 1).density_bound == 1.0


def test_truncated_law_matches_conditioned_gaussian():
    # Given |x| <= 1 the squared modulus of a standard complex Gaussian is
    # exponential truncated to [0, 1]; its mean is 1 - e^-1/(1 - e^-1).
    book = generate_codebook(1, 200_000, 1, law="truncated_gaussian", seed=8)
    power = np.abs(book.symbols.ravel()) ** 2
    expected = 1.0 - math.exp(-1.0) / (1.0 - math.exp(-1.0))
    assert abs(power.mean() - expected) <= 3 * power.std() / math.sqrt(power.size)


def test_codebook_validation_and_determinism():
    with pytest.raises(ValueError):
        generate_codebook(0, 4, 1)
    with pytest.raises(ValueError):
        generate_codebook(2, 4, 1, law="uniform")
    a = generate_codebook(3, 4, 2, seed=5)
    np.testing.assert_array_equal(a.symbols, generate_codebook(3, 4, 2, seed=5).symbols)


def test_frame_of_zero_codeword_is_pilots_only():
    s = build_schedule(7, 2, 2, 10)
    frame = transmit_frame(np.zeros((2, 10)), s)
    assert frame.shape == (2, s.frame_length)
    nonzero = np.flatnonzero(np.any(frame != 0, axis=0))
    np.testing.assert_array_equal(nonzero, s.pilot_indices)
    np.testing.assert_array_equal(frame[:, 1], [0, 1])
    np.testing.assert_array_equal(frame[:, 7], [1, 0])


def test_frame_places_codeword_in_order():
    s = build_schedule(4, 1, 3, 6)
    x = np.arange(1, 7).reshape(1, 6).astype(complex)
    frame = transmit_frame(x, s)
    np.testing.assert_array_equal(frame[0, s.data_indices], x[0])
    assert np.all(frame[0, s.silent_indices] == 0)
    with pytest.raises(ValueError):
        transmit_frame(np.zeros((1, 5)), s)


def test_zero_snr_is_pure_noise():
    s = build_schedule(4, 1, 2, 3)
    frame = transmit_frame(np.ones((1, 3)), s)
    fade = synthesize(RECT_EIGHTH, s.frame_length, (1, 1), seed=1, n_frames=4000)
    y = channel_apply(frame, fade, 0.0, noise_seed=3)
    assert np.mean(np.abs(y) ** 2) == pytest.approx(1.0, abs=0.03)


def test_noiseless_unit_channel():
    h = np.ones((1, 1, 5))
    y = channel_apply(np.ones((1, 5)), h, 250.0, noise=False)
    np.testing.assert_allclose(y, math.sqrt(250.0))


def test_receive_power_is_snr_plus_one():
    snr = 10.0
    s = build_schedule(4, 2, 2, 20)
    frames = 3000
    book = generate_codebook(frames, 20, 2, seed=2)
    fade = synthesize(RECT_EIGHTH, s.frame_length, (2, 2), seed=6, n_frames=frames)
    y = channel_apply(transmit_frame(book.symbols, s), fade, snr, noise_seed=9)
    power = np.abs(y[..., s.data_indices]) ** 2
    per_frame = power.mean(axis=(1, 2))
    se = per_frame.std(ddof=1) / math.sqrt(frames)
    assert abs(per_frame.mean() - (snr + 1.0)) <= 3 * se


def test_perfect_csi_noiseless_decode():
    s = build_schedule(4, 2, 2, 6)
    book = generate_codebook(2, 6, 2, seed=3)
    fade = synthesize(RECT_EIGHTH, s.frame_length, (2, 2), seed=4)
    for m in range(2):
        y = channel_apply(transmit_frame(book.symbols[m], s), fade, 100.0, noise=False)
        result = nn_decode(y, fade.samples[..., s.data_indices], book, s, 100.0)
        assert result.message == m
        assert result.metrics[m] == pytest.approx(0.0, abs=1e-20)
        assert not result.tie


def test_single_message_and_ties():
    s = build_schedule(3, 1, 1, 2)
    book = generate_codebook(1, 2, 1)
    y = complex_normal(np.random.default_rng(0), (1, s.frame_length))
    h = np.ones((1, 1, 2))
    assert nn_decode(y, h, book, s, 1.0).message == 0
    twin = generate_codebook(1, 2, 1)
    doubled = type(book)(symbols=np.concatenate([twin.symbols, twin.symbols]), law="gaussian",
                         seed=0)
    result = nn_decode(y, h, doubled, s, 1.0)
    assert result.message == 0 and result.tie


def test_metric_is_sum_of_slot_metrics():
    s = build_schedule(5, 2, 2, 9)
    book = generate_codebook(7, 9, 2, seed=1)
    rng = np.random.default_rng(5)
    y = complex_normal(rng, (3, s.frame_length))
    h = complex_normal(rng, (3, 2, 9))
    per_slot = slot_metrics(y, h, book, s, 4.0)
    total = nn_decode(y, h, book, s, 4.0).metrics
    np.testing.assert_allclose(per_slot.sum(axis=1), total, rtol=1e-9)
    # Data-slot input gives the same metrics as the full frame.
    np.testing.assert_allclose(slot_metrics(y[:, s.data_indices], h, book, s, 4.0), per_slot)


def test_decision_invariant_to_consistent_scaling():
    s = build_schedule(4, 1, 2, 6)
    book = generate_codebook(16, 6, 1, seed=1)
    rng = np.random.default_rng(6)
    for _ in range(20):
        y = complex_normal(rng, (2, s.frame_length))
        h = complex_normal(rng, (2, 1, 6))
        base = nn_decode(y, h, book, s, 3.0).message
        for c in (0.1, 7.0):
            scaled = type(book)(symbols=c * book.symbols, law=book.law, seed=book.seed)
            assert nn_decode(c * y, c * h, book, s, 3.0).message == base
            assert nn_decode(y, h, scaled, s, 3.0 / c**2).message == base


def test_matches_coherent_ml_on_random_instances():
    s = build_schedule(4, 2, 2, 4)
    rng = np.random.default_rng(12)
    for trial in range(100):
        book = generate_codebook(8, 4, 2, seed=trial)
        fade = synthesize(RECT_EIGHTH, s.frame_length, (2, 2), seed=1000 + trial)
        m = int(rng.integers(8))
        snr = float(10 ** rng.uniform(-1, 2))
        y = channel_apply(transmit_frame(book.symbols[m], s), fade, snr, noise_seed=trial)
        h = fade.samples[..., s.data_indices]
        ml = np.argmax([coherent_log_likelihood(y[:, s.data_indices], h, book.symbols[j], snr)
                        for j in range(8)])
        assert nn_decode(y, h, book, s, snr).message == ml


def test_decoder_estimator_api():
    s = build_schedule(4, 1, 2, 6)
    book = generate_codebook(4, 6, 1, seed=0)
    dec = NearestNeighborDecoder(schedule=s, snr=100.0)
    with pytest.raises(NotFittedError):
        dec.predict(np.zeros((1, s.frame_length)), np.zeros((1, 1, 6)))
    with pytest.raises(ValueError):
        dec.fit(generate_codebook(4, 3, 1))
    dec.fit(book)
    fade = synthesize(RECT_EIGHTH, s.frame_length, (1, 1), seed=2, n_frames=4)
    y = channel_apply(transmit_frame(book.symbols, s), fade, 100.0, noise=False)
    h = fade.samples[..., s.data_indices]
    np.testing.assert_array_equal(dec.predict(y, h), [0, 1, 2, 3])
    assert dec.predict(y[2], h[2]) == 2


def test_longer_codewords_lower_block_errors_at_matched_rate():
    # Rate log(4)/32 = log(16)/64 nats per symbol; L = 3 keeps both lengths
    # multiples of the two data slots per period.
    snr = 10 ** (-3 / 10)
    short = simulate_block_errors(RECT_EIGHTH, build_schedule(3, 1, 16, 32), 1, snr, M=4,
                                  frames=500, seed=77)
    long = simulate_block_errors(RECT_EIGHTH, build_schedule(3, 1, 16, 64), 1, snr, M=16,
                                 frames=500, seed=77)
    assert long.error_rate < short.error_rate
    buf = io.StringIO()
    write_block_errors([short, long], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "snr_db,n,M,frames,block_errors,ber_se"
    assert lines[1].split(",")[1:4] == ["32", "4", "500"]


def test_block_errors_are_deterministic():
    s = build_schedule(3, 1, 4, 8)
    a = simulate_block_errors(RECT_EIGHTH, s, 1, 1.0, M=8, frames=200, seed=3, chunk=64)
    b = simulate_block_errors(RECT_EIGHTH, s, 1, 1.0, M=8, frames=200, seed=3, chunk=64)
    assert a == b
    assert 0 <= a.block_errors <= 200
