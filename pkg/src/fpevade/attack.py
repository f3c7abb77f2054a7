"""Bounded evasion attacks: projected gradient descent with Adam steps.

The perturbation budget ``epsilon`` is given on the [0, 1] amplitude scale,
so samples in [-1, 1] may move by at most ``2 * epsilon``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .audio_io import AudioSignal, NormReport, perturbation_norms
from .fingerprint import Fingerprint, PeakParams, fingerprint, overlap, removal_rate
from .frontend import FrontendConfig
from .losses import LossParams, remix_loss, robust_loss, whitebox_loss
from .matcher import MatchResult

log = logging.getLogger(__name__)

MODES = ("default", "remix")


@dataclass(frozen=True)
class AttackConfig:
    """Optimizer settings.

    ``loss`` picks the objective of the default attack: ``"robust"`` (hinge
    on two pooled windows) or ``"whitebox"`` (shared-peak magnitude).
    """

    epsilon: float = 0.05
    iterations: int = 2000
    learning_rate: float = 2e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_params: LossParams = field(default_factory=LossParams)
    mode: str = "default"
    loss: str = "robust"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.epsilon <= 0.5:
            raise ValueError("epsilon must lie in [0, 0.5]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.loss not in ("robust", "whitebox"):
            raise ValueError("loss must be 'robust' or 'whitebox'")


@dataclass
class AttackReport:
    mode: str
    epsilon: float
    norms: NormReport
    removal_rate: float
    loss_trajectory: list[float]
    iterations_run: int
    match_before: MatchResult | None = None
    match_after: MatchResult | None = None
    overlap_with_target: int | None = None
    overlap_with_target_before: int | None = None

    def to_dict(self) -> dict:
        traj = self.loss_trajectory
        return {
            "mode": self.mode,
            "epsilon": self.epsilon,
            "iterations": self.iterations_run,
            "linf": self.norms.linf,
            "l2_rms": self.norms.l2_rms,
            "removal_rate": self.removal_rate,
            "loss_first": traj[0] if traj else None,
            "loss_last": traj[-1] if traj else None,
            "match_before": self.match_before.to_dict() if self.match_before else None,
            "match_after": self.match_after.to_dict() if self.match_after else None,
            "overlap_with_target": self.overlap_with_target,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(
    state: AdamState,
    gradient: np.ndarray,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns the new state and the step to add."""
    if gradient.shape != state.m.shape:
        raise ValueError(f"gradient shape {gradient.shape} != state shape {state.m.shape}")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * gradient
    v = beta2 * state.v + (1 - beta2) * gradient * gradient
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    step = -learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(m, v, t), step


def _project(x: np.ndarray, delta: np.ndarray, bound: float) -> np.ndarray:
    delta = np.clip(delta, -bound, bound)
    return np.clip(x + delta, -1.0, 1.0) - x


def _check_input(x: AudioSignal, frontend: FrontendConfig) -> None:
    if frontend.n_frames(len(x)) < 1:
        raise ValueError(f"signal of {len(x)} samples is too short for one frame")


def _run_pgd(x, objective, config: AttackConfig) -> tuple[np.ndarray, list[float]]:
    bound = 2.0 * config.epsilon
    delta = np.zeros(len(x))
    state = AdamState.zeros(delta.size)
    trajectory = []
    for it in range(config.iterations):
        value, grad = objective(x.samples + delta)
        trajectory.append(value)
        state, step = adam_step(
            state, grad, config.learning_rate,
            config.adam_beta1, config.adam_beta2, config.adam_eps,
        )
        delta = _project(x.samples, delta + step, bound)
        if it % 200 == 0:
            log.debug("iter %d loss %.6g", it, value)
    return delta, trajectory


def _default_objective(fp_x: Fingerprint, config: AttackConfig, frontend, peak_params):
    params = config.loss_params
    if config.loss == "whitebox":
        def objective(samples):
            r = whitebox_loss(samples, fp_x, frontend, params, peak_params)
            return r.value, r.gradient
    else:
        params = _with_margin(params, fp_x)

        def objective(samples):
            r = robust_loss(samples, fp_x, frontend, params)
            return r.value, r.gradient
    return objective


def _with_margin(params: LossParams, target: Fingerprint) -> LossParams:
    return replace(params, c=params.margin(target))


def _finish(x, delta, fp_x, config, frontend, peak_params, trajectory, mode):
    x_adv = AudioSignal(np.clip(x.samples + delta, -1.0, 1.0), x.sample_rate)
    fp_adv = fingerprint(x_adv, frontend, peak_params)
    report = AttackReport(
        mode=mode,
        epsilon=config.epsilon,
        norms=perturbation_norms(x, x_adv),
        removal_rate=removal_rate(fp_x, fp_adv),
        loss_trajectory=trajectory,
        iterations_run=len(trajectory),
    )
    return x_adv, fp_adv, report


def _clean_fingerprint(x, frontend, peak_params) -> Fingerprint:
    _check_input(x, frontend)
    fp_x = fingerprint(x, frontend, peak_params)
    if len(fp_x) == 0:
        raise ValueError("clean signal has an empty fingerprint; nothing to remove")
    return fp_x


def default_attack(
    x: AudioSignal,
    config: AttackConfig = AttackConfig(),
    frontend: FrontendConfig = FrontendConfig(),
    peak_params: PeakParams = PeakParams(),
) -> tuple[AudioSignal, AttackReport]:
    """Minimize the chosen loss against the clean fingerprint within the l-inf ball.

    The clean fingerprint is computed once and held fixed for the whole run.
    """
    fp_x = _clean_fingerprint(x, frontend, peak_params)
    if config.epsilon == 0:
        delta, trajectory = np.zeros(len(x)), []
    else:
        objective = _default_objective(fp_x, config, frontend, peak_params)
        delta, trajectory = _run_pgd(x, objective, config)
    x_adv, _, report = _finish(x, delta, fp_x, config, frontend, peak_params, trajectory, "default")
    return x_adv, report


def remix_attack(
    x: AudioSignal,
    y: AudioSignal,
    config: AttackConfig = AttackConfig(mode="remix"),
    frontend: FrontendConfig = FrontendConfig(),
    peak_params: PeakParams = PeakParams(),
) -> tuple[AudioSignal, AttackReport]:
    """Move away from x's fingerprint while planting peaks near those of ``y``.

    ``y`` is cut or zero-padded to the length of ``x`` so both feature maps
    share a shape.
    """
    if x.sample_rate != y.sample_rate:
        raise ValueError("x and y must share a sample rate")
    fp_x = _clean_fingerprint(x, frontend, peak_params)
    y_samples = np.zeros(len(x))
    n = min(len(x), len(y))
    y_samples[:n] = y.samples[:n]
    fp_y = fingerprint(AudioSignal(y_samples, y.sample_rate), frontend, peak_params)
    before = overlap(fp_x, fp_y)

    params = config.loss_params
    away = _with_margin(params, fp_x)
    toward = _with_margin(params, fp_y)
    lam = params.lam

    def objective(samples):
        r = robust_loss(samples, fp_x, frontend, away)
        if lam == 0:
            return r.value, r.gradient
        s = remix_loss(samples, fp_y, frontend, toward)
        return r.value + lam * s.value, r.gradient + lam * s.gradient

    if config.epsilon == 0:
        delta, trajectory = np.zeros(len(x)), []
    else:
        delta, trajectory = _run_pgd(x, objective, config)
    x_adv, fp_adv, report = _finish(
        x, delta, fp_x, config, frontend, peak_params, trajectory, "remix"
    )
    report.overlap_with_target_before = before
    report.overlap_with_target = overlap(fp_adv, fp_y)
    return x_adv, report


def random_noise_baseline(
    x: AudioSignal,
    epsilon: float,
    seed: int = 0,
    frontend: FrontendConfig = FrontendConfig(),
    peak_params: PeakParams = PeakParams(),
) -> tuple[AudioSignal, AttackReport]:
    """Uniform noise in [-2 eps, 2 eps] with the same clamping and metrics as the attacks."""
    fp_x = _clean_fingerprint(x, frontend, peak_params)
    rng = np.random.default_rng(seed)
    bound = 2.0 * epsilon
    delta = _project(x.samples, rng.uniform(-bound, bound, len(x)), bound)
    config = AttackConfig(epsilon=epsilon, iterations=1, seed=seed)
    x_adv, _, report = _finish(x, delta, fp_x, config, frontend, peak_params, [], "noise")
    return x_adv, report
