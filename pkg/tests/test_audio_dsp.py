from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from invigil.audio.dsp import (
    PcmWindow,
    Spectrogram,
    WindowTooShort,
    fft_rows,
    hann_window,
    spectrogram_shape,
    stft_spectrogram,
)


def _rel_err(got, want):
    scale = max(np.max(np.abs(want)), 1e-12)
    return np.max(np.abs(got - want)) / scale


# ---------------------------------------------------------------------------
# FFT core


@pytest.mark.parametrize("n", [1, 2, 4, 8, 32, 128, 512])
def test_fft_matches_direct_dft(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal(n)
    assert _rel_err(fft_rows(x), oracles.dft_naive(x)) < 1e-9


def test_fft_complex_input():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    assert _rel_err(fft_rows(x), oracles.dft_naive(x)) < 1e-9


def test_fft_batches_rows_independently():
    rng = np.random.default_rng(9)
    rows = rng.standard_normal((5, 32))
    batched = fft_rows(rows)
    for i in range(5):
        assert np.array_equal(batched[i], fft_rows(rows[i]))


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        fft_rows(np.zeros(12))


def test_fft_parseval():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(256)
    spectrum = fft_rows(x)
    # unnormalised transform: sum |X|^2 = N sum |x|^2
    assert np.sum(np.abs(spectrum) ** 2) == pytest.approx(256 * np.sum(x**2), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fft_linearity(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 64))
    lhs = fft_rows(2.5 * a - b)
    rhs = 2.5 * fft_rows(a) - fft_rows(b)
    assert _rel_err(lhs, rhs) < 1e-9


def test_fft_impulse_is_flat():
    x = np.zeros(32)
    x[0] = 1.0
    assert np.allclose(fft_rows(x), np.ones(32))


# ---------------------------------------------------------------------------
# Hann window


def test_hann_endpoints_and_symmetry():
    w = hann_window(512)
    assert w[0] == 0.0 and w[-1] == 0.0
    assert np.allclose(w, w[::-1])
    assert np.all((w >= 0.0) & (w <= 1.0))


def test_hann_odd_length_peaks_at_one():
    w = hann_window(33)
    assert w[16] == pytest.approx(1.0)


def test_hann_length_one():
    assert np.array_equal(hann_window(1), np.ones(1))


# ---------------------------------------------------------------------------
# Spectrogram


def test_default_shape_is_61_by_257():
    window = PcmWindow(samples=np.zeros(16000))
    spec = stft_spectrogram(window)
    assert spec.shape == (61, 257)
    assert spectrogram_shape(16000) == (61, 257)


def test_stft_matches_naive_oracle_small():
    rng = np.random.default_rng(0xD5B)
    samples = rng.uniform(-1, 1, 2048)
    window = PcmWindow(samples=samples, sample_rate=2048)
    spec = stft_spectrogram(window, frame_len=256, hop=128)
    want = oracles.stft_naive(samples, 256, 128)
    assert spec.magnitudes.shape == want.shape
    assert _rel_err(spec.magnitudes, want) < 1e-6


def test_stft_matches_naive_oracle_default_frame():
    rng = np.random.default_rng(0xD5C)
    samples = rng.uniform(-1, 1, 1024)
    window = PcmWindow(samples=samples, sample_rate=1024)
    spec = stft_spectrogram(window)
    want = oracles.stft_naive(samples, 512, 256)
    assert _rel_err(spec.magnitudes, want) < 1e-6


def test_sine_tone_peaks_at_expected_bin():
    t = np.arange(16000) / 16000.0
    window = PcmWindow(samples=0.5 * np.sin(2 * np.pi * 1000.0 * t))
    spec = stft_spectrogram(window)
    # 1000 Hz at 16 kHz with 512-point frames: bin 1000 * 512 / 16000 = 32
    peaks = np.argmax(spec.magnitudes, axis=1)
    assert np.all(peaks == 32)


def test_stft_rejects_bad_frame_len_and_hop():
    window = PcmWindow(samples=np.zeros(16000))
    with pytest.raises(ValueError):
        stft_spectrogram(window, frame_len=300)
    with pytest.raises(ValueError):
        stft_spectrogram(window, hop=0)
    with pytest.raises(ValueError):
        stft_spectrogram(window, frame_len=256, hop=512)


def test_window_shorter_than_frame_rejected():
    window = PcmWindow(samples=np.zeros(256), sample_rate=256)
    with pytest.raises(WindowTooShort):
        stft_spectrogram(window, frame_len=512)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from([512, 1024, 2048, 4096]),
    st.sampled_from([64, 128, 256]),
    st.sampled_from([1, 2, 4]),
)
def test_shape_helper_agrees_with_output(n, frame_len, hop_divisor):
    hop = frame_len // hop_divisor
    window = PcmWindow(samples=np.zeros(n), sample_rate=n)
    spec = stft_spectrogram(window, frame_len=frame_len, hop=hop)
    assert spec.shape == spectrogram_shape(n, frame_len, hop)


def test_model_input_is_log1p():
    spec = Spectrogram(magnitudes=np.full((3, 257), 2.0), frame_len=512, hop=256)
    assert np.array_equal(spec.model_input(), np.log1p(np.full((3, 257), 2.0)))


def test_magnitudes_nonnegative():
    rng = np.random.default_rng(4)
    window = PcmWindow(samples=rng.uniform(-1, 1, 16000))
    assert np.all(stft_spectrogram(window).magnitudes >= 0.0)


# ---------------------------------------------------------------------------
# Value objects


def test_pcm_window_validates_length():
    with pytest.raises(ValueError):
        PcmWindow(samples=np.zeros(15999))
    with pytest.raises(ValueError):
        PcmWindow(samples=np.zeros((2, 16000)))
    with pytest.raises(ValueError):
        PcmWindow(samples=np.zeros(100), sample_rate=0)


def test_pcm_window_equality():
    a = PcmWindow(samples=np.zeros(100), sample_rate=100)
    b = PcmWindow(samples=np.zeros(100), sample_rate=100)
    c = PcmWindow(samples=np.ones(100), sample_rate=100)
    assert a == b and a != c


def test_spectrogram_validates_bin_count():
    with pytest.raises(ValueError):
        Spectrogram(magnitudes=np.zeros((3, 100)), frame_len=512, hop=256)


def test_spectrogram_equality():
    m = np.arange(6.0).reshape(3, 2)
    a = Spectrogram(magnitudes=m, frame_len=2, hop=1)
    b = Spectrogram(magnitudes=m.copy(), frame_len=2, hop=1)
    assert a == b
    assert a != Spectrogram(magnitudes=m + 1, frame_len=2, hop=1)
