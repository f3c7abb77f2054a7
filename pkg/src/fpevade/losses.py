"""Attack losses on the feature map and their gradients w.r.t. raw samples.

All three losses are evaluated against a reference fingerprint ``target``:

* ``whitebox_loss``  -- feature magnitude summed over peaks shared by the
  input and the target.  The input's own peak map is recomputed on every
  call and treated as a constant.
* ``robust_loss``    -- for each target peak, hinge on
  ``c - (smax over the w1 window - smax over the w2 window)``.
* ``remix_loss``     -- the same hinge with the two pooled terms swapped.

Gradients are obtained by hand: the pooled-term gradient is scattered onto
the feature map and pushed back through ``FrontendTape``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioSignal
from .errors import ConfigMismatchError
from .fingerprint import Fingerprint, PeakParams, peak_mask
from .frontend import FrontendConfig, FrontendTape, features

LOSS_KINDS = ("whitebox", "robust", "remix")


@dataclass(frozen=True)
class LossParams:
    """Loss hyperparameters.

    ``c`` is the absolute hinge margin.  When it is None the margin is
    ``c_ratio`` times the largest target peak magnitude, which is the global
    maximum of the target's feature map.
    """

    w1: int = 5
    w2: int = 2
    c: float | None = None
    c_ratio: float = 0.05
    alpha: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if not 1 <= self.w2 < self.w1:
            raise ValueError("need 1 <= w2 < w1")
        if self.c is not None and self.c <= 0:
            raise ValueError("margin c must be positive")
        if self.c_ratio <= 0:
            raise ValueError("c_ratio must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    def margin(self, target: Fingerprint) -> float:
        if self.c is not None:
            return float(self.c)
        if len(target) == 0:
            return self.c_ratio
        return self.c_ratio * float(target.magnitudes.max())


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray


def smooth_max(values, alpha: float) -> float:
    """``sum(v * exp(alpha v)) / sum(exp(alpha v))``, shifted by max(v) for stability."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("smooth_max of an empty sequence")
    e = np.exp(alpha * (v - v.max()))
    return float(np.dot(v, e) / e.sum())


def _masked_smooth_max(vals: np.ndarray, valid: np.ndarray, alpha: float):
    """Smooth max over the last two axes, ignoring invalid entries.

    Returns the value per leading index and its gradient w.r.t. ``vals``.
    """
    top = np.where(valid, vals, -np.inf).max(axis=(-2, -1), keepdims=True)
    e = np.where(valid, np.exp(alpha * (np.where(valid, vals, top) - top)), 0.0)
    w = e / e.sum(axis=(-2, -1), keepdims=True)
    s = (w * vals).sum(axis=(-2, -1))
    grad = w * (1.0 + alpha * (vals - s[:, None, None]))
    return s, grad


class _PeakWindows:
    """Feature-map windows of half-width w1 around each target peak, edge-truncated."""

    def __init__(self, mag: np.ndarray, target: Fingerprint, w1: int):
        n_t, n_k = mag.shape
        self.shape = mag.shape
        self.w1 = w1
        self.padded_shape = (n_t + 2 * w1, n_k + 2 * w1)
        padded = np.zeros(self.padded_shape)
        padded[w1 : w1 + n_t, w1 : w1 + n_k] = mag
        valid = np.zeros(self.padded_shape, dtype=bool)
        valid[w1 : w1 + n_t, w1 : w1 + n_k] = True
        offs = np.arange(2 * w1 + 1)
        rows = target.peak_frames[:, None, None] + offs[None, :, None]
        cols = target.peak_bins[:, None, None] + offs[None, None, :]
        self.flat = rows * self.padded_shape[1] + cols
        self.vals = padded.ravel()[self.flat]
        self.valid = valid.ravel()[self.flat]

    def inner(self, w2: int) -> slice:
        return slice(self.w1 - w2, self.w1 + w2 + 1)

    def scatter(self, grad_windows: np.ndarray) -> np.ndarray:
        """Sum per-window gradients back onto an unpadded feature-map gradient."""
        size = self.padded_shape[0] * self.padded_shape[1]
        acc = np.bincount(self.flat.ravel(), weights=grad_windows.ravel(), minlength=size)
        acc = acc.reshape(self.padded_shape)
        w, (n_t, n_k) = self.w1, self.shape
        return acc[w : w + n_t, w : w + n_k]


def _as_samples(x) -> np.ndarray:
    if isinstance(x, AudioSignal):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def _check_dims(mag: np.ndarray, target: Fingerprint) -> None:
    if mag.shape != (target.frames, target.bins):
        raise ConfigMismatchError(
            f"feature map shape {mag.shape} does not match target fingerprint "
            f"{(target.frames, target.bins)}"
        )


def whitebox_loss(
    x,
    target: Fingerprint,
    config: FrontendConfig,
    params: LossParams,
    peak_params: PeakParams | None = None,
    self_mask: np.ndarray | None = None,
) -> LossValue:
    """Feature magnitude summed over positions that are peaks of both x and target.

    ``self_mask`` overrides the recomputed peak map of ``x``; the gradient
    check uses it to hold the mask fixed while perturbing the input.
    """
    tape = FrontendTape(_as_samples(x), config)
    mag = tape.magnitude
    _check_dims(mag, target)
    if self_mask is None:
        self_mask = peak_mask(mag, peak_params or PeakParams(w1=params.w1))
    joint = self_mask & target.mask()
    grad_mag = joint.astype(np.float64)
    return LossValue(float(mag[joint].sum()), tape.backward(grad_mag))


def _hinge_loss(x, target, config, params, swap: bool) -> LossValue:
    tape = FrontendTape(_as_samples(x), config)
    mag = tape.magnitude
    _check_dims(mag, target)
    if len(target) == 0:
        return LossValue(0.0, np.zeros(tape.n_samples))
    c = params.margin(target)
    win = _PeakWindows(mag, target, params.w1)
    inner = win.inner(params.w2)
    s1, g1 = _masked_smooth_max(win.vals, win.valid, params.alpha)
    s2, g2_inner = _masked_smooth_max(
        win.vals[:, inner, inner], win.valid[:, inner, inner], params.alpha
    )
    gap = s2 - s1 if swap else s1 - s2
    hinge = c - gap
    active = hinge > 0
    # d(gap)/d(window) for the active terms; the loss gradient is its negative
    dgap = np.zeros_like(g1)
    dgap += -g1 if swap else g1
    dgap[:, inner, inner] += g2_inner if swap else -g2_inner
    dgap[~active] = 0.0
    grad_mag = win.scatter(-dgap)
    return LossValue(float(hinge[active].sum()), tape.backward(grad_mag))


def robust_loss(x, target: Fingerprint, config: FrontendConfig, params: LossParams) -> LossValue:
    """Hinge pushing every target peak to have a larger value between radius w2 and w1."""
    return _hinge_loss(x, target, config, params, swap=False)


def remix_loss(x, target: Fingerprint, config: FrontendConfig, params: LossParams) -> LossValue:
    """Hinge pulling a local maximum into the w2 window of every target peak.

    The w2 window never exceeds the w1 window, so each term is at least
    about ``c``; the constant floor does not affect the gradient.
    """
    return _hinge_loss(x, target, config, params, swap=True)


def evaluate(kind: str, x, target, config, params, **kwargs) -> LossValue:
    if kind == "whitebox":
        return whitebox_loss(x, target, config, params, **kwargs)
    if kind == "robust":
        return robust_loss(x, target, config, params)
    if kind == "remix":
        return remix_loss(x, target, config, params)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def finite_diff_check(
    kind: str,
    x,
    target: Fingerprint,
    config: FrontendConfig,
    params: LossParams,
    h: float = 1e-4,
    n_coords: int = 64,
    seed: int = 0,
    peak_params: PeakParams | None = None,
) -> float:
    """Max relative error between the analytic gradient and central differences.

    Checks ``n_coords`` randomly chosen samples.  Coordinates where both
    derivatives are below 1e-10 in magnitude are skipped.  For the white-box
    loss the input's peak map is frozen at ``x``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    samples = _as_samples(x).copy()
    kwargs = {}
    if kind == "whitebox":
        mag = features(samples, config).values
        kwargs["self_mask"] = peak_mask(mag, peak_params or PeakParams(w1=params.w1))
    analytic = evaluate(kind, samples, target, config, params, **kwargs).gradient
    rng = np.random.default_rng(seed)
    idx = rng.choice(samples.size, size=min(n_coords, samples.size), replace=False)
    worst = 0.0
    for i in idx:
        orig = samples[i]
        samples[i] = orig + h
        up = evaluate(kind, samples, target, config, params, **kwargs).value
        samples[i] = orig - h
        down = evaluate(kind, samples, target, config, params, **kwargs).value
        samples[i] = orig
        numeric = (up - down) / (2 * h)
        a = analytic[i]
        scale = max(abs(a), abs(numeric))
        if scale < 1e-10:
            continue
        worst = max(worst, abs(a - numeric) / scale)
    return worst
