"""Mono audio container, 16-bit PCM WAV reading/writing, resampling and
perturbation norms.

Samples live in [-1, +1] internally.  Norms are reported on the [0, 1]
amplitude scale, which halves every sample difference.
"""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParseError

DEFAULT_SAMPLE_RATE = 8000
PCM_SCALE = 32768.0


@dataclass(frozen=True)
class AudioSignal:
    """Mono waveform with samples in [-1, +1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.ascontiguousarray(self.samples, dtype=np.float64)
        if x.ndim != 1 or x.size < 1:
            raise ValueError("samples must be a non-empty 1-D array")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1.0:
            raise ValueError("samples must be finite and lie in [-1, 1]")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class NormReport:
    """Perturbation size on the [0, 1] amplitude scale.

    ``l2_rms`` is the root-mean-square of the difference, not the raw
    Euclidean norm, so it is directly comparable with ``linf``.
    """

    linf: float
    l2_rms: float

    def to_dict(self) -> dict:
        return {"linf": self.linf, "l2_rms": self.l2_rms}


def _read_chunks(data: bytes) -> dict[bytes, bytes]:
    if len(data) < 12:
        raise ParseError("file too short for a RIFF header")
    riff, _size, wave_id = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF" or wave_id != b"WAVE":
        raise FormatError("not a RIFF/WAVE file")
    chunks: dict[bytes, bytes] = {}
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise ParseError(f"chunk {cid!r} truncated: {len(body)} of {size} bytes")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM WAV file into a mono float array in [-1, 1].

    Stereo input is averaged across channels.
    """
    data = Path(path).read_bytes()
    chunks = _read_chunks(data)
    if b"fmt " not in chunks:
        raise ParseError("missing fmt chunk")
    if b"data" not in chunks:
        raise ParseError("missing data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise ParseError("fmt chunk too short")
    code, channels, rate, _brate, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if code == 0xFFFE and len(fmt) >= 26:
        # WAVE_FORMAT_EXTENSIBLE carries the real format code in the subformat GUID
        code = struct.unpack_from("<H", fmt, 24)[0]
    if code != 1:
        raise FormatError(f"unsupported WAV format code {code} (only PCM is supported)")
    if bits != 16:
        raise FormatError(f"unsupported bit depth {bits} (only 16-bit is supported)")
    if channels not in (1, 2):
        raise FormatError(f"unsupported channel count {channels}")
    if rate <= 0:
        raise ParseError("sample rate must be positive")
    raw = chunks[b"data"]
    if len(raw) % (2 * channels):
        raise ParseError("data chunk does not hold a whole number of frames")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    pcm = pcm.reshape(-1, channels).mean(axis=1)
    return pcm / PCM_SCALE, int(rate)


def resample(signal: AudioSignal, new_rate: int) -> AudioSignal:
    """Linear-interpolation resampling (no anti-alias filter).

    Output sample ``i`` is read at input position ``i * old_rate / new_rate``.
    """
    if new_rate <= 0:
        raise ValueError(f"new_rate must be positive, got {new_rate}")
    old_rate = signal.sample_rate
    if new_rate == old_rate:
        return signal
    n = len(signal)
    n_out = math.ceil(n * new_rate / old_rate)
    pos = np.arange(n_out) * (old_rate / new_rate)
    out = np.interp(pos, np.arange(n), signal.samples)
    return AudioSignal(np.clip(out, -1.0, 1.0), new_rate)


def load_audio(path, target_rate: int | None = DEFAULT_SAMPLE_RATE) -> AudioSignal:
    """Load a WAV file as mono, resampled to ``target_rate`` (None keeps the file rate)."""
    samples, rate = read_wav(path)
    if samples.size == 0:
        raise ParseError("WAV file holds no samples")
    sig = AudioSignal(samples, rate)
    if target_rate is not None:
        sig = resample(sig, target_rate)
    return sig


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Quantize [-1, 1] floats to int16 by rounding, saturating at the int range."""
    q = np.round(np.asarray(samples, dtype=np.float64) * PCM_SCALE)
    return np.clip(q, -32768, 32767).astype("<i2")


def save_audio(signal: AudioSignal, path) -> None:
    """Write a mono 16-bit PCM WAV file."""
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(to_pcm16(signal.samples).tobytes())


def perturbation_norms(x: AudioSignal, x_adv: AudioSignal) -> NormReport:
    """Norms of ``x_adv - x`` after mapping both signals onto [0, 1]."""
    if len(x) != len(x_adv):
        raise ValueError(f"length mismatch: {len(x)} vs {len(x_adv)}")
    if x.sample_rate != x_adv.sample_rate:
        raise ValueError(f"sample rate mismatch: {x.sample_rate} vs {x_adv.sample_rate}")
    d = (x_adv.samples - x.samples) / 2.0
    linf = float(np.max(np.abs(d)))
    l2 = float(np.sqrt(np.mean(d * d)))
    # rounding in the mean can push rms a hair above max for constant d
    return NormReport(linf=linf, l2_rms=min(l2, linf))
