"""Differentiable spectral-peak audio fingerprinting, an open-set matcher,
and gradient-based evasion attacks against the fingerprint."""

from .attack import AttackConfig, AttackReport, default_attack, random_noise_baseline, remix_attack
from .audio_io import AudioSignal, NormReport, load_audio, perturbation_norms, resample, save_audio
from .fingerprint import Fingerprint, PeakParams, extract_peaks, fingerprint, overlap, removal_rate
from .frontend import FrontendConfig, Spectrogram, features, hann_kernel, smooth, spectrogram
from .losses import LossParams, remix_loss, robust_loss, smooth_max, whitebox_loss
from .matcher import FingerprintDb, MatchResult, load_db, save_db

__version__ = "0.1.0"
