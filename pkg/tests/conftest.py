import numpy as np
import pytest

from fpevade.audio_io import AudioSignal
from fpevade.fingerprint import PeakParams, fingerprint
from fpevade.frontend import FrontendConfig
from fpevade.matcher import FingerprintDb

from music import SR, synth_track

N_TRACKS = 20
TRACK_SECONDS = 30.0
EXCERPT = 10 * SR


@pytest.fixture(scope="session")
def frontend():
    return FrontendConfig()


@pytest.fixture(scope="session")
def peak_params():
    return PeakParams()


@pytest.fixture(scope="session")
def tracks():
    return [synth_track(i, TRACK_SECONDS) for i in range(N_TRACKS)]


@pytest.fixture(scope="session")
def corpus_db(tracks, frontend, peak_params):
    db = FingerprintDb()
    for i, x in enumerate(tracks):
        db.ingest(track_name(i), fingerprint(x, frontend, peak_params))
    return db


@pytest.fixture(scope="session")
def clip10():
    """Ten seconds of corpus track 0 starting at frame 100."""
    x = synth_track(0, TRACK_SECONDS)
    return excerpt(x, 100 * 256)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def track_name(i: int) -> str:
    return f"track{i:02d}"


def excerpt(x: AudioSignal, start: int, length: int = EXCERPT) -> AudioSignal:
    return AudioSignal(x.samples[start : start + length], x.sample_rate)
