"""Spectrogram front end for one-second audio windows.

The transform is implemented here directly (iterative radix-2 FFT)
rather than delegating to a library routine, so the whole audio path is
self-contained and checkable against a naive DFT. Convention: Hann
window, unnormalised forward transform, magnitudes of the non-negative
frequency bins. With that convention a frame satisfies
sum_k |X_k|^2 = N * sum_n |w_n x_n|^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import EngineError

DEFAULT_FRAME_LEN = 512
DEFAULT_HOP = 256


class WindowTooShort(EngineError):
    """The audio window holds fewer samples than one analysis frame."""


@dataclass(frozen=True, eq=False)
class PcmWindow:
    """Exactly one second of mono samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = 16_000

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if arr.ndim != 1 or arr.shape[0] != self.sample_rate:
            raise ValueError(
                f"window must hold exactly {self.sample_rate} samples, got shape {arr.shape}"
            )
        object.__setattr__(self, "samples", arr)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PcmWindow):
            return NotImplemented
        return self.sample_rate == other.sample_rate and bool(
            np.array_equal(self.samples, other.samples)
        )


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Magnitude matrix, frames by frequency bins (frame_len/2 + 1)."""

    magnitudes: np.ndarray
    frame_len: int
    hop: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.magnitudes, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"magnitudes must be a 2-d matrix, got shape {arr.shape}")
        if arr.shape[1] != self.frame_len // 2 + 1:
            raise ValueError(
                f"expected {self.frame_len // 2 + 1} bins for frame_len {self.frame_len}, "
                f"got {arr.shape[1]}"
            )
        object.__setattr__(self, "magnitudes", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.magnitudes.shape  # type: ignore[return-value]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Spectrogram):
            return NotImplemented
        return (
            self.frame_len == other.frame_len
            and self.hop == other.hop
            and bool(np.array_equal(self.magnitudes, other.magnitudes))
        )

    def model_input(self) -> np.ndarray:
        """Log-compressed magnitudes, log(1 + m), as fed to the classifier."""
        return np.log1p(self.magnitudes)


def spectrogram_shape(n_samples: int, frame_len: int = DEFAULT_FRAME_LEN, hop: int = DEFAULT_HOP) -> tuple[int, int]:
    """(frames, bins) produced by stft_spectrogram for the given sizes."""
    return (n_samples - frame_len) // hop + 1, frame_len // 2 + 1


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window, 0.5 - 0.5 cos(2 pi k / (n - 1))."""
    if n == 1:
        return np.ones(1)
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / (n - 1))


@lru_cache(maxsize=8)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft_rows(frames: np.ndarray) -> np.ndarray:
    """Unnormalised forward DFT of each row via iterative radix-2.

    Row length must be a power of two. Input may be real or complex;
    output is complex128 with the same leading shape.
    """
    frames = np.asarray(frames)
    n = frames.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"row length must be a power of two, got {n}")
    a = frames[..., _bit_reversal(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(a.shape[:-1] + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(a.shape)
        size *= 2
    return a


def stft_spectrogram(
    window: PcmWindow,
    frame_len: int = DEFAULT_FRAME_LEN,
    hop: int = DEFAULT_HOP,
) -> Spectrogram:
    """Hann-windowed short-time transform, magnitudes of bins 0..frame_len/2.

    frame_len must be a power of two and 0 < hop <= frame_len. A
    16000-sample window at the 512/256 defaults yields a 61 x 257
    matrix.
    """
    if frame_len < 2 or frame_len & (frame_len - 1):
        raise ValueError(f"frame_len must be a power of two, got {frame_len}")
    if not (0 < hop <= frame_len):
        raise ValueError(f"hop must satisfy 0 < hop <= frame_len, got {hop}")
    samples = window.samples
    n = samples.shape[0]
    if n < frame_len:
        raise WindowTooShort(f"window of {n} samples is shorter than one {frame_len}-sample frame")
    num_frames = (n - frame_len) // hop + 1
    starts = np.arange(num_frames) * hop
    frames = samples[starts[:, None] + np.arange(frame_len)[None, :]]
    spectrum = fft_rows(frames * hann_window(frame_len))
    mags = np.abs(spectrum[:, : frame_len // 2 + 1])
    return Spectrogram(magnitudes=mags, frame_len=frame_len, hop=hop)
