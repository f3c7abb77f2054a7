"""Spectral front end: normalized Hann smoothing followed by a bank of
Fourier kernels and a magnitude.

Both layers are plain strided convolutions, so besides the forward pass this
module exposes the matching backward pass (vector-Jacobian product from a
gradient on the magnitude spectrogram to a gradient on the raw samples).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import AudioSignal


@dataclass(frozen=True)
class FrontendConfig:
    """Front-end geometry.

    Parameters
    ----------
    fft_size : int
        Length N of the Fourier kernels; bins 0..N/2 are kept.
    hop : int
        Stride between frames, in samples.
    hann_width : int
        Hann kernel width; the kernel has ``hann_width + 1`` taps.
    """

    fft_size: int = 1024
    hop: int = 256
    hann_width: int = 64

    def __post_init__(self):
        if self.hann_width < 2:
            raise ValueError("hann_width must be >= 2")
        if self.fft_size < 2 or self.fft_size % 2:
            raise ValueError("fft_size must be an even integer >= 2")
        if not 1 <= self.hop <= self.fft_size:
            raise ValueError("hop must lie in [1, fft_size]")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        """Frame count for a raw signal of ``n_samples`` (0 if too short)."""
        n_smooth = n_samples - self.hann_width
        if n_smooth < self.fft_size:
            return 0
        return (n_smooth - self.fft_size) // self.hop + 1


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude array of shape (frames, bins)."""

    values: np.ndarray
    config: FrontendConfig = field(default_factory=FrontendConfig)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("spectrogram values must be 2-D")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


def hann_kernel(config: FrontendConfig) -> np.ndarray:
    """Normalized Hann taps ``sin^2(pi n / Nh) / sum_i sin^2(pi i / Nh)``, n = 0..Nh."""
    return _hann(config.hann_width).copy()


@lru_cache(maxsize=8)
def _hann(width: int) -> np.ndarray:
    w = np.sin(np.pi * np.arange(width + 1) / width) ** 2
    w /= w.sum()
    w.setflags(write=False)
    return w


def fourier_kernels(n: int) -> np.ndarray:
    """Stacked real and imaginary parts of exp(-2j pi k m / N), shape (2 * bins, N).

    The transform itself runs through ``numpy.fft.rfft``, which computes the
    same inner products; the explicit kernels are kept for inspection and tests.
    """
    k = np.arange(n // 2 + 1)[:, None]
    m = np.arange(n)[None, :]
    # reduce k*m mod N first so the phase stays exact for large N
    phase = 2.0 * np.pi * ((k * m) % n) / n
    return np.concatenate([np.cos(phase), -np.sin(phase)], axis=0)


def smooth(x, config: FrontendConfig) -> np.ndarray:
    """Valid-mode convolution of the samples with the normalized Hann kernel."""
    samples = x.samples if isinstance(x, AudioSignal) else np.asarray(x, dtype=np.float64)
    h = _hann(config.hann_width)
    if samples.size < h.size:
        raise ValueError(
            f"signal of {samples.size} samples is shorter than the {h.size}-tap Hann kernel"
        )
    return np.convolve(samples, h, mode="valid")


def _frame(s: np.ndarray, config: FrontendConfig) -> np.ndarray:
    n = config.fft_size
    if s.size < n:
        raise ValueError(f"need at least {n} samples for one frame, got {s.size}")
    return sliding_window_view(s, n)[:: config.hop]


def _complex_parts(s: np.ndarray, config: FrontendConfig) -> tuple[np.ndarray, np.ndarray]:
    z = np.fft.rfft(_frame(s, config), axis=1)
    return z.real, z.imag


def spectrogram(x_smoothed, config: FrontendConfig) -> Spectrogram:
    """Frame-wise DFT magnitude of an (already smoothed) sequence, bins 0..N/2."""
    re, im = _complex_parts(np.asarray(x_smoothed, dtype=np.float64), config)
    return Spectrogram(np.hypot(re, im), config)


def features(x, config: FrontendConfig) -> Spectrogram:
    """Feature map: ``spectrogram(smooth(x))``."""
    return spectrogram(smooth(x, config), config)


class FrontendTape:
    """Forward pass that keeps what the backward pass needs.

    >>> tape = FrontendTape(samples, config)
    >>> dx = tape.backward(dmag)   # dmag has the shape of tape.magnitude
    """

    def __init__(self, samples: np.ndarray, config: FrontendConfig):
        self.config = config
        self.n_samples = samples.size
        s = smooth(samples, config)
        self.n_smooth = s.size
        self.re, self.im = _complex_parts(s, config)
        self.magnitude = np.hypot(self.re, self.im)

    def backward(self, grad_mag: np.ndarray) -> np.ndarray:
        cfg = self.config
        mag = self.magnitude
        # d|z| is taken as 0 where |z| == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(mag > 0, grad_mag / mag, 0.0)
        n, hop = cfg.fft_size, cfg.hop
        # transpose of the real DFT: frame grad[m] = sum_k Re(g_k exp(2j pi k m / N)),
        # i.e. N * irfft with the interior bins halved
        g = scale * (self.re + 1j * self.im)
        g[:, 1 : n // 2] *= 0.5
        dframes = n * np.fft.irfft(g, n=n, axis=1)
        ds = np.zeros(self.n_smooth)
        for t in range(dframes.shape[0]):
            ds[t * hop : t * hop + n] += dframes[t]
        h = _hann(cfg.hann_width)
        return np.convolve(ds, h[::-1], mode="full")


def to_csv(spec: Spectrogram, path) -> None:
    """One frame per row, bins as comma-separated columns."""
    np.savetxt(path, spec.values, delimiter=",", fmt="%.9g")


def to_pgm(spec: Spectrogram, path) -> None:
    """Binary 8-bit PGM, frequency on the vertical axis (bin 0 at the bottom).

    Values are scaled by the global maximum; an all-zero spectrogram is black.
    """
    v = spec.values
    peak = v.max() if v.size else 0.0
    img = np.zeros_like(v) if peak <= 0 else np.round(255.0 * v / peak)
    img = img.astype(np.uint8).T[::-1]
    height, width = img.shape
    with open(Path(path), "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img).tobytes())
