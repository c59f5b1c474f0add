"""Label-preserving augmentations and random transform-set generation.

Every transform has two entry points: a ``*_array`` form that works on any
array whose last two axes are ``[C, T]`` (so whole batches go through one
call), and a :class:`~compaug.types.Window` form that validates and rewraps.

Fractional segment boundaries become integer indices with round-half-up,
applied to the start and to the length independently; the length is then
trimmed so the segment never runs past the end of the window.

Randomness comes from ``numpy.random.Generator`` (PCG64); callers pass a
generator in and nothing here keeps global state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import BadBand, BadConfig
from .types import (
    SPEC_KINDS,
    Clip,
    Jitter,
    KeepOnly,
    SegmentOut,
    SensorOut,
    TransformSpec,
    Window,
)

DEFAULT_ALPHA = 0.1
DEFAULT_CLIP_RATIO = 0.2
DEFAULT_SEGMENT_RATIO = 0.1
DEFAULT_SENSOR_RATIO = 0.1
TRAINING_KINDS = ("Jitter", "Clip", "SegmentOut", "SensorOut")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def segment_bounds(start_frac: float, ratio: float, length: int) -> Tuple[int, int]:
    """Integer ``(start, n)`` for a fractional segment on a window of ``length`` steps."""
    start = min(round_half_up(start_frac * length), length)
    n = round_half_up(ratio * length)
    return start, max(0, min(n, length - start))


def default_bands(sampling_rate_hz: float, n_bands: int = 8) -> List[Tuple[float, float]]:
    """Equal-width bands partitioning ``[0, Nyquist]``."""
    edges = np.linspace(0.0, sampling_rate_hz / 2.0, n_bands + 1)
    return [(float(edges[i]), float(edges[i + 1])) for i in range(n_bands)]


# --------------------------------------------------------------------------
# array kernels
# --------------------------------------------------------------------------


def jitter_noise(shape, alpha, sigma2, rng: np.random.Generator, band=None,
                 sampling_rate_hz=None) -> np.ndarray:
    """Noise with per-channel variance ``alpha * sigma2`` for arrays of ``shape`` [..., C, T].

    Without a band this is plain white Gaussian noise. With a band, white noise is
    FFT-masked to ``[f_lo, f_hi]`` and each channel is rescaled so its mean
    square equals ``alpha * sigma2[c]`` exactly.
    """
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    target = alpha * np.broadcast_to(sigma2, (shape[-2],))[:, None]
    white = rng.standard_normal(shape)
    if band is None:
        return white * np.sqrt(target)
    if sampling_rate_hz is None:
        raise BadBand("band-limited jitter needs the sampling rate")
    lo, hi = band
    if hi > sampling_rate_hz / 2 + 1e-9:
        raise BadBand(f"band {band} exceeds Nyquist {sampling_rate_hz / 2} Hz")
    length = shape[-1]
    spectrum = np.fft.rfft(white, axis=-1)
    freqs = np.fft.rfftfreq(length, d=1.0 / sampling_rate_hz)
    spectrum[..., (freqs < lo) | (freqs > hi)] = 0.0
    shaped = np.fft.irfft(spectrum, n=length, axis=-1)
    power = np.mean(shaped**2, axis=-1, keepdims=True)
    # a band holding no FFT bin yields no noise
    gain = np.divide(np.sqrt(target), np.sqrt(power), out=np.zeros_like(power), where=power > 0)
    return shaped * gain


def _edge_line(x: np.ndarray, idx: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Least-squares line through ``x[..., idx]`` evaluated at ``targets``."""
    t = idx.astype(np.float64)
    ys = x[..., idx]
    if idx.size == 1:
        return np.repeat(ys, targets.size, axis=-1)
    t_mean = t.mean()
    y_mean = ys.mean(axis=-1, keepdims=True)
    slope = ((ys - y_mean) * (t - t_mean)).sum(axis=-1, keepdims=True) / ((t - t_mean) ** 2).sum()
    return y_mean + slope * (targets - t_mean)


def clip_array(x: np.ndarray, start: int, n: int) -> np.ndarray:
    """Replace ``[start, start+n)`` on every channel by a linear fill.

    Interior gaps interpolate between the neighbours ``start-1`` and ``start+n``.
    A gap touching either end has one neighbour side only; it is filled from a
    least-squares line over the nearest ``max(n, 2)`` retained samples on that
    side, which is flat when only one sample is left. A gap covering the whole
    window leaves nothing to fit and becomes zeros.
    """
    out = np.array(x, dtype=np.float64, copy=True)
    length = out.shape[-1]
    if n <= 0:
        return out
    end = start + n
    if start > 0 and end < length:
        left = out[..., start - 1 : start]
        right = out[..., end : end + 1]
        frac = np.arange(1, n + 1, dtype=np.float64) / (n + 1)
        out[..., start:end] = left + (right - left) * frac
        return out
    targets = np.arange(start, end, dtype=np.float64)
    if start == 0 and end == length:
        out[...] = 0.0
    elif start == 0:
        k = min(max(n, 2), length - end)
        out[..., start:end] = _edge_line(out, np.arange(end, end + k), targets)
    else:
        k = min(max(n, 2), start)
        out[..., start:end] = _edge_line(out, np.arange(start - k, start), targets)
    return out


def segment_out_array(x: np.ndarray, channels: Sequence[int], start: int, n: int) -> np.ndarray:
    out = np.array(x, dtype=np.float64, copy=True)
    if n > 0:
        out[..., list(channels), start : start + n] = 0.0
    return out


def keep_only_array(x: np.ndarray, start: int, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    out[..., start : start + n] = x[..., start : start + n]
    return out


def apply_array(spec: TransformSpec, x: np.ndarray, sigma2=None, rng=None,
                sampling_rate_hz=None) -> np.ndarray:
    """Apply ``spec`` to an array of windows ``[..., C, T]``."""
    x = np.asarray(x, dtype=np.float64)
    n_channels, length = x.shape[-2], x.shape[-1]
    if sampling_rate_hz is not None:
        spec.check(n_channels, sampling_rate_hz)
    else:
        spec.check(n_channels, math.inf)
    if isinstance(spec, Jitter):
        if spec.alpha == 0.0:
            return x.copy()
        if sigma2 is None or rng is None:
            raise BadConfig("jitter needs per-channel sigma2 and a random generator")
        return x + jitter_noise(x.shape, spec.alpha, sigma2, rng, spec.band, sampling_rate_hz)
    if isinstance(spec, Clip):
        return clip_array(x, *segment_bounds(spec.start_frac, spec.ratio, length))
    if isinstance(spec, SegmentOut):
        return segment_out_array(x, spec.channels, *segment_bounds(spec.start_frac, spec.ratio, length))
    if isinstance(spec, SensorOut):
        return segment_out_array(x, spec.channels, 0, length)
    if isinstance(spec, KeepOnly):
        return keep_only_array(x, *segment_bounds(spec.start_frac, spec.ratio, length))
    raise BadConfig(f"unknown transform spec {spec!r}")


# --------------------------------------------------------------------------
# window-level operations
# --------------------------------------------------------------------------


def apply(spec: TransformSpec, w: Window, sigma2=None, rng=None) -> Window:
    return w.with_values(apply_array(spec, w.values, sigma2, rng, w.sampling_rate_hz))


def jitter(w: Window, alpha: float, sigma2, rng: np.random.Generator, band=None) -> Window:
    return apply(Jitter(alpha, band), w, sigma2, rng)


def clip(w: Window, start_frac: float, ratio: float) -> Window:
    return apply(Clip(start_frac, ratio), w)


def segment_out(w: Window, channels, start_frac: float, ratio: float) -> Window:
    return apply(SegmentOut(channels, start_frac, ratio), w)


def sensor_out(w: Window, channels) -> Window:
    return apply(SensorOut(channels), w)


def keep_only(w: Window, start_frac: float, ratio: float) -> Window:
    return apply(KeepOnly(start_frac, ratio), w)


# --------------------------------------------------------------------------
# random transform sets
# --------------------------------------------------------------------------


def _around(default: float) -> Tuple[float, float]:
    return (0.5 * default, 1.5 * default)


@dataclass(frozen=True)
class TransformSetConfig:
    """Parameter ranges for randomly generated transform sets.

    Each range defaults to [0.5x, 1.5x] of the reference setting
    (alpha 0.1, clip ratio 0.2, segment/sensor ratio 0.1). ``band_prob`` is
    the chance that a jitter spec is restricted to one of ``n_bands``
    equal-width bands instead of being full-band.
    """

    kinds: Tuple[str, ...] = TRAINING_KINDS
    alpha: Tuple[float, float] = _around(DEFAULT_ALPHA)
    clip_ratio: Tuple[float, float] = _around(DEFAULT_CLIP_RATIO)
    segment_ratio: Tuple[float, float] = _around(DEFAULT_SEGMENT_RATIO)
    sensor_ratio: Tuple[float, float] = _around(DEFAULT_SENSOR_RATIO)
    band_prob: float = 0.5
    n_bands: int = 8
    segment_all_channels: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        for name in ("alpha", "clip_ratio", "segment_ratio", "sensor_ratio"):
            value = getattr(self, name)
            try:
                lo, hi = (float(v) for v in value)
            except (TypeError, ValueError):
                raise BadConfig(f"{name} must be a (low, high) pair, got {value!r}") from None
            if not (0.0 <= lo <= hi) or (name != "alpha" and hi > 1.0):
                raise BadConfig(f"bad {name} range {value!r}")
            object.__setattr__(self, name, (lo, hi))
        if not self.kinds:
            raise BadConfig("at least one transform kind must be enabled")
        for kind in self.kinds:
            if kind not in SPEC_KINDS or kind == "KeepOnly":
                raise BadConfig(f"{kind!r} is not a training transform kind")
        if not 0.0 <= self.band_prob <= 1.0:
            raise BadConfig("band_prob must lie in [0, 1]")
        if self.n_bands < 1:
            raise BadConfig("n_bands must be >= 1")


def _segment_start(rng: np.random.Generator, ratio: float) -> float:
    start = float(rng.uniform(0.0, 1.0 - ratio)) if ratio < 1.0 else 0.0
    return min(start, math.nextafter(1.0, 0.0))


def generate_transform_set(cfg: TransformSetConfig, count: int, rng: np.random.Generator,
                           n_channels: int, sampling_rate_hz: float) -> List[TransformSpec]:
    """Draw ``count`` specs: kind uniformly among ``cfg.kinds``, then its parameters uniformly."""
    if count < 0:
        raise BadConfig(f"count must be >= 0, got {count}")
    if n_channels < 1:
        raise BadConfig("n_channels must be >= 1")
    bands = default_bands(sampling_rate_hz, cfg.n_bands)
    specs: List[TransformSpec] = []
    for _ in range(count):
        kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
        if kind == "Jitter":
            alpha = float(rng.uniform(*cfg.alpha))
            band = bands[int(rng.integers(len(bands)))] if rng.random() < cfg.band_prob else None
            specs.append(Jitter(alpha, band))
        elif kind == "Clip":
            ratio = float(rng.uniform(*cfg.clip_ratio))
            specs.append(Clip(_segment_start(rng, ratio), ratio))
        elif kind == "SegmentOut":
            ratio = float(rng.uniform(*cfg.segment_ratio))
            start = _segment_start(rng, ratio)
            if cfg.segment_all_channels:
                channels = range(n_channels)
            else:
                k = int(rng.integers(1, n_channels + 1))
                channels = rng.choice(n_channels, size=k, replace=False)
            specs.append(SegmentOut(tuple(channels), start, ratio))
        else:  # SensorOut
            k = max(1, min(n_channels, round_half_up(float(rng.uniform(*cfg.sensor_ratio)) * n_channels)))
            specs.append(SensorOut(tuple(rng.choice(n_channels, size=k, replace=False))))
    return specs
