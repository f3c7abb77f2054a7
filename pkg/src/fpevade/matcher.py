"""Open-set lookup of fingerprints by time-offset histogram.

For every reference track, each query peak (t, k) votes for the offsets
``d`` at which the reference has a peak at (t + d, k).  The best
(track, offset) pair wins, and is reported only when the fraction of query
peaks it explains reaches the threshold.

Query peaks within ``edge_guard`` frames of either end of the query are left
out of the vote: their pooling windows reach past the excerpt, so they need
not exist in the full reference.  Set the guard to the peak pooling
half-width.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigMismatchError, ParseError
from .fingerprint import Fingerprint, deserialize, serialize

DEFAULT_TAU = 0.1
DEFAULT_EDGE_GUARD = 5
INDEX_NAME = "index.txt"


@dataclass(frozen=True)
class MatchResult:
    track_id: str
    offset_frames: int
    raw_hits: int
    score: float

    def to_dict(self) -> dict:
        return {
            "track_id": self.track_id,
            "offset_frames": self.offset_frames,
            "raw_hits": self.raw_hits,
            "score": self.score,
        }


class FingerprintDb:
    """Reference fingerprints keyed by track id, all sharing one config digest.

    Queries only read the database.  Callers must not ingest while another
    thread is querying.
    """

    def __init__(self, digest: int | None = None, edge_guard: int = DEFAULT_EDGE_GUARD):
        if edge_guard < 0:
            raise ValueError("edge_guard must be >= 0")
        self.digest = digest
        self.edge_guard = edge_guard
        self.entries: dict[str, Fingerprint] = {}
        self._index: dict[str, dict[int, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, track_id: str) -> bool:
        return track_id in self.entries

    def ingest(self, track_id: str, fp: Fingerprint) -> None:
        if self.digest is None:
            self.digest = fp.digest
        elif fp.digest != self.digest:
            raise ConfigMismatchError(
                f"fingerprint digest {fp.digest:#x} does not match database {self.digest:#x}"
            )
        self.entries[track_id] = fp
        self._index[track_id] = _bin_index(fp)

    def best_offset(self, track_id: str, q: Fingerprint) -> tuple[int, int]:
        """(offset, hits) maximizing hits for one entry; ties go to the smallest offset."""
        hist, lo = self._histogram(track_id, q)
        best = int(np.argmax(hist))
        return best + lo, int(hist[best])

    def scored_part(self, q: Fingerprint) -> Fingerprint:
        """The query peaks that take part in scoring (edge frames dropped).

        The guard shrinks for very short queries so at least one frame stays.
        """
        g = min(self.edge_guard, (q.frames - 1) // 2)
        if g <= 0:
            return q
        return q.crop(g, q.frames - g).shifted(g, q.frames)

    def _histogram(self, track_id: str, q: Fingerprint) -> tuple[np.ndarray, int]:
        ref = self.entries[track_id]
        lo = -q.frames
        hist = np.zeros(q.frames + ref.frames, dtype=np.int64)
        index = self._index[track_id]
        votes = []
        for k in np.unique(q.peak_bins):
            ref_t = index.get(int(k))
            if ref_t is None:
                continue
            q_t = q.peak_frames[q.peak_bins == k]
            votes.append((ref_t[None, :] - q_t[:, None]).ravel())
        if votes:
            d = np.concatenate(votes) - lo
            hist += np.bincount(d, minlength=hist.size)[: hist.size]
        return hist, lo

    def query(self, q: Fingerprint, tau: float = DEFAULT_TAU) -> MatchResult | None:
        """Best match scoring at least ``tau``, or None."""
        best = self.rank(q)
        if best and best[0].score >= tau:
            return best[0]
        return None

    def rank(self, q: Fingerprint) -> list[MatchResult]:
        """Best offset per track, sorted by hits (desc) then track id."""
        if len(q) == 0:
            raise ValueError("query fingerprint has no peaks")
        if self.digest is not None and q.digest != self.digest:
            raise ConfigMismatchError(
                f"query digest {q.digest:#x} does not match database {self.digest:#x}"
            )
        q = self.scored_part(q)
        results = []
        for track_id in self.entries:
            offset, hits = self.best_offset(track_id, q)
            results.append(MatchResult(track_id, offset, hits, hits / len(q) if len(q) else 0.0))
        results.sort(key=lambda r: (-r.raw_hits, r.track_id))
        return results


def _bin_index(fp: Fingerprint) -> dict[int, np.ndarray]:
    order = np.argsort(fp.peak_bins, kind="stable")
    k = fp.peak_bins[order]
    t = fp.peak_frames[order]
    keys, starts = np.unique(k, return_index=True)
    return {int(b): seg for b, seg in zip(keys, np.split(t, starts[1:]))}


def ingest(db: FingerprintDb, track_id: str, fp: Fingerprint) -> None:
    db.ingest(track_id, fp)


def query(db: FingerprintDb, q: Fingerprint, tau: float = DEFAULT_TAU) -> MatchResult | None:
    return db.query(q, tau)


def save_db(db: FingerprintDb, directory) -> None:
    """One .afp per track plus ``index.txt`` with ``track_id<TAB>filename`` lines."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, track_id in enumerate(sorted(db.entries)):
        if "\t" in track_id or "\n" in track_id:
            raise ValueError(f"track id {track_id!r} contains a tab or newline")
        name = f"track{i:05d}.afp"
        serialize(db.entries[track_id], root / name)
        lines.append(f"{track_id}\t{name}\n")
    with open(root / INDEX_NAME, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)


def load_db(directory) -> FingerprintDb:
    root = Path(directory)
    db = FingerprintDb()
    index = root / INDEX_NAME
    if not index.exists():
        if root.is_dir() and not any(root.iterdir()):
            return db
        raise ParseError(f"{index} not found")
    for n, line in enumerate(index.read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"{index}:{n}: expected 'track_id<TAB>filename'")
        track_id, name = parts
        path = root / name
        if not path.exists():
            raise ParseError(f"{index}:{n}: missing fingerprint file {name}")
        db.ingest(track_id, deserialize(path))
    return db
