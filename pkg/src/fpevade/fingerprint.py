"""Binary peak fingerprints.

A position of the feature map is a peak when it equals the max-pooled map
over a square (2*w1+1) neighborhood, truncated at the borders, is positive,
and is at least ``theta`` times the largest value found in the frames within
``w1`` of it.  One peak is one "hash".

The floor looks only at nearby frames, so a peak depends on a bounded stretch
of audio: cutting an excerpt out of a track leaves its interior peaks
unchanged.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter, maximum_filter1d

from .audio_io import AudioSignal
from .errors import ConfigMismatchError, FormatError, ParseError
from .frontend import FrontendConfig, Spectrogram, features

AFP_MAGIC = b"AFP1"
_HEADER = struct.Struct("<4sIIQQ")
_RECORD = np.dtype([("frame", "<u4"), ("bin", "<u4"), ("mag", "<f4")])


@dataclass(frozen=True)
class PeakParams:
    w1: int = 5
    theta: float = 0.01

    def __post_init__(self):
        if self.w1 < 1:
            raise ValueError("w1 must be >= 1")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError("theta must lie in [0, 1)")


def config_digest(config: FrontendConfig, params: PeakParams) -> int:
    """64-bit identifier of the settings a fingerprint was built with."""
    key = (
        f"fft_size={config.fft_size};hop={config.hop};hann_width={config.hann_width};"
        f"w1={params.w1};theta={params.theta!r}"
    )
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True, eq=False)
class Fingerprint:
    """Sparse peak map, peaks sorted by (frame, bin)."""

    frames: int
    bins: int
    digest: int
    peak_frames: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    peak_bins: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    magnitudes: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float32))

    def __post_init__(self):
        t = np.asarray(self.peak_frames, dtype=np.int64).ravel()
        k = np.asarray(self.peak_bins, dtype=np.int64).ravel()
        m = np.asarray(self.magnitudes, dtype=np.float32).ravel()
        if not t.size == k.size == m.size:
            raise ValueError("peak arrays must have equal lengths")
        if t.size:
            if t.min() < 0 or t.max() >= self.frames or k.min() < 0 or k.max() >= self.bins:
                raise ValueError("peak coordinate out of bounds")
            order = np.lexsort((k, t))
            t, k, m = t[order], k[order], m[order]
            flat = t * self.bins + k
            if np.any(np.diff(flat) == 0):
                raise ValueError("duplicate peak coordinates")
        for name, arr in (("peak_frames", t), ("peak_bins", k), ("magnitudes", m)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.peak_frames.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return (
            (self.frames, self.bins, self.digest) == (other.frames, other.bins, other.digest)
            and np.array_equal(self.peak_frames, other.peak_frames)
            and np.array_equal(self.peak_bins, other.peak_bins)
            and np.array_equal(self.magnitudes, other.magnitudes)
        )

    @property
    def flat_index(self) -> np.ndarray:
        return self.peak_frames * self.bins + self.peak_bins

    def mask(self) -> np.ndarray:
        """Dense boolean (frames, bins) map."""
        out = np.zeros((self.frames, self.bins), dtype=bool)
        out[self.peak_frames, self.peak_bins] = True
        return out

    def coords(self) -> set[tuple[int, int]]:
        return set(zip(self.peak_frames.tolist(), self.peak_bins.tolist()))

    def crop(self, start: int, stop: int) -> "Fingerprint":
        """Peaks in frames [start, stop), re-based so ``start`` becomes frame 0."""
        start, stop = max(start, 0), min(stop, self.frames)
        keep = (self.peak_frames >= start) & (self.peak_frames < stop)
        return Fingerprint(
            max(stop - start, 0),
            self.bins,
            self.digest,
            self.peak_frames[keep] - start,
            self.peak_bins[keep],
            self.magnitudes[keep],
        )

    def shifted(self, by: int, frames: int) -> "Fingerprint":
        """Move every peak ``by`` frames later inside a map of ``frames`` frames."""
        return Fingerprint(
            frames,
            self.bins,
            self.digest,
            self.peak_frames + by,
            self.peak_bins,
            self.magnitudes,
        )

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "bins": self.bins,
            "config_digest": self.digest,
            "peak_count": len(self),
            "peaks": [
                [int(t), int(k), float(m)]
                for t, k, m in zip(self.peak_frames, self.peak_bins, self.magnitudes)
            ],
        }


def peak_mask(values: np.ndarray, params: PeakParams) -> np.ndarray:
    """Boolean peak map of a dense (frames, bins) array."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or v.max() <= 0:
        return np.zeros(v.shape, dtype=bool)
    size = 2 * params.w1 + 1
    # 'nearest' replicates border values, which leaves the max of a
    # border-truncated window unchanged
    pooled = maximum_filter(v, size=size, mode="nearest")
    floor = params.theta * maximum_filter1d(v.max(axis=1), size=size, mode="nearest")
    return (v == pooled) & (v >= floor[:, None]) & (v > 0)


def extract_peaks(spec: Spectrogram, params: PeakParams) -> Fingerprint:
    if spec.values.size == 0:
        raise ValueError("empty spectrogram")
    mask = peak_mask(spec.values, params)
    t, k = np.nonzero(mask)
    return Fingerprint(
        spec.frames,
        spec.bins,
        config_digest(spec.config, params),
        t,
        k,
        spec.values[t, k].astype(np.float32),
    )


def fingerprint(x: AudioSignal, config: FrontendConfig, params: PeakParams) -> Fingerprint:
    return extract_peaks(features(x, config), params)


def _check_compatible(a: Fingerprint, b: Fingerprint) -> None:
    if a.digest != b.digest:
        raise ConfigMismatchError(f"config digests differ: {a.digest:#x} vs {b.digest:#x}")
    if (a.frames, a.bins) != (b.frames, b.bins):
        raise ConfigMismatchError(
            f"fingerprint shapes differ: {(a.frames, a.bins)} vs {(b.frames, b.bins)}"
        )


def overlap(a: Fingerprint, b: Fingerprint) -> int:
    """Number of peaks at identical (frame, bin) coordinates."""
    _check_compatible(a, b)
    return int(np.intersect1d(a.flat_index, b.flat_index, assume_unique=True).size)


def removal_rate(original: Fingerprint, adversarial: Fingerprint) -> float:
    """Fraction of the original peaks missing from the adversarial fingerprint."""
    if len(original) == 0:
        raise ValueError("original fingerprint has no peaks")
    return 1.0 - overlap(original, adversarial) / len(original)


def serialize(fp: Fingerprint, path) -> None:
    Path(path).write_bytes(to_bytes(fp))


def to_bytes(fp: Fingerprint) -> bytes:
    rec = np.empty(len(fp), dtype=_RECORD)
    rec["frame"] = fp.peak_frames
    rec["bin"] = fp.peak_bins
    rec["mag"] = fp.magnitudes
    return _HEADER.pack(AFP_MAGIC, fp.frames, fp.bins, fp.digest, len(fp)) + rec.tobytes()


def from_bytes(data: bytes) -> Fingerprint:
    if len(data) < 4 or data[:4] != AFP_MAGIC:
        if len(data) >= 4 and data[:3] == b"AFP":
            raise FormatError(f"unsupported fingerprint version {data[3:4]!r}")
        raise FormatError("bad magic: not a fingerprint file")
    if len(data) < _HEADER.size:
        raise ParseError("truncated fingerprint header")
    _, frames, bins, digest, count = _HEADER.unpack_from(data, 0)
    body = data[_HEADER.size :]
    if len(body) != count * _RECORD.itemsize:
        raise ParseError(
            f"expected {count} peak records ({count * _RECORD.itemsize} bytes), "
            f"found {len(body)} bytes"
        )
    rec = np.frombuffer(body, dtype=_RECORD)
    try:
        return Fingerprint(frames, bins, digest, rec["frame"], rec["bin"], rec["mag"])
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def deserialize(path) -> Fingerprint:
    return from_bytes(Path(path).read_bytes())


def to_json(fp: Fingerprint, path) -> None:
    Path(path).write_text(json.dumps(fp.to_dict()) + "\n")
