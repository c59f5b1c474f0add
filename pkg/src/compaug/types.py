"""Shared domain types.

All types are frozen after construction. Arrays are copied on the way in and
marked read-only, so instances can be shared freely between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import ClassVar, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    BadBand,
    BadChannel,
    BadLabel,
    BadRange,
    BadSamplingRate,
    NegativeAlpha,
    NonFinite,
    ShapeMismatch,
)

# slack for start_frac + ratio <= 1 after float arithmetic
_FRAC_EPS = 1e-12
SIMPLEX_TOL = 1e-6


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _field_equal(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = np.asarray(a), np.asarray(b)
        return a.dtype == b.dtype and a.shape == b.shape and bool(np.array_equal(a, b))
    if isinstance(a, (tuple, list)) and isinstance(b, (tuple, list)):
        return len(a) == len(b) and all(_field_equal(x, y) for x, y in zip(a, b))
    return a == b


class _ArrayEq:
    """Field-wise equality that understands numpy arrays."""

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return all(
            _field_equal(getattr(self, f.name), getattr(other, f.name))
            for f in fields(self)
            if f.compare
        )

    __hash__ = None


# --------------------------------------------------------------------------
# windows and datasets
# --------------------------------------------------------------------------


def validate_window(w) -> None:
    """Raise if ``w`` (anything with Window's attributes) breaks a Window invariant."""
    values = np.asarray(w.values)
    if values.ndim != 2:
        raise ShapeMismatch(f"window values must be 2-D [C x T], got shape {values.shape}")
    n_channels, length = values.shape
    if n_channels < 1:
        raise ShapeMismatch("window needs at least one channel (C >= 1)")
    if length < 2:
        raise ShapeMismatch(f"window needs at least two timesteps (T >= 2), got T={length}")
    if len(w.channel_names) != n_channels:
        raise ShapeMismatch(
            f"{len(w.channel_names)} channel names for {n_channels} channels"
        )
    if not np.all(np.isfinite(values)):
        raise NonFinite("window values must all be finite (found NaN or Inf)")
    rate = w.sampling_rate_hz
    if not (isinstance(rate, (int, float)) and math.isfinite(rate) and rate > 0):
        raise BadSamplingRate(f"sampling_rate_hz must be positive and finite, got {rate!r}")


@dataclass(frozen=True, eq=False)
class Window(_ArrayEq):
    """One fixed-shape multichannel slice, stored channels-major ``[C, T]``."""

    values: np.ndarray
    channel_names: Tuple[str, ...]
    sampling_rate_hz: float

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))
        object.__setattr__(self, "channel_names", tuple(str(c) for c in self.channel_names))
        rate = self.sampling_rate_hz
        if isinstance(rate, (int, float, np.floating, np.integer)):
            object.__setattr__(self, "sampling_rate_hz", float(rate))
        validate_window(self)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def with_values(self, values) -> "Window":
        return Window(values, self.channel_names, self.sampling_rate_hz)


@dataclass(frozen=True, eq=False)
class LabeledWindow(_ArrayEq):
    window: Window
    label: int
    subject_id: str

    def __post_init__(self):
        if int(self.label) != self.label or self.label < 0:
            raise BadLabel(f"label must be a non-negative integer, got {self.label!r}")
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "subject_id", str(self.subject_id))


@dataclass(frozen=True, eq=False)
class Dataset(_ArrayEq):
    """A labeled set of windows sharing one shape and channel layout.

    Stored as a dense ``[N, C, T]`` block; :attr:`windows` gives the per-window view.
    """

    values: np.ndarray
    labels: np.ndarray
    subject_ids: Tuple[str, ...]
    class_names: Tuple[str, ...]
    channel_names: Tuple[str, ...]
    sampling_rate_hz: float

    def __post_init__(self):
        values = _frozen_array(self.values)
        labels = _frozen_array(self.labels, dtype=np.int64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))
        object.__setattr__(self, "channel_names", tuple(str(c) for c in self.channel_names))
        object.__setattr__(self, "sampling_rate_hz", float(self.sampling_rate_hz))

        if values.ndim != 3:
            raise ShapeMismatch(f"dataset values must be [N, C, T], got shape {values.shape}")
        n = values.shape[0]
        if labels.shape != (n,) or len(self.subject_ids) != n:
            raise ShapeMismatch("labels and subject_ids must have one entry per window")
        if values.shape[1] != len(self.channel_names):
            raise ShapeMismatch("channel_names does not match the channel axis")
        if values.shape[1] < 1 or values.shape[2] < 2:
            raise ShapeMismatch(f"windows must have C >= 1 and T >= 2, got {values.shape[1:]}")
        if len(self.class_names) < 2:
            raise BadLabel("a dataset needs at least two classes (K >= 2)")
        if n and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise BadLabel(f"labels must lie in [0, {len(self.class_names)})")
        if not np.all(np.isfinite(values)):
            raise NonFinite("dataset contains non-finite values")
        if not (math.isfinite(self.sampling_rate_hz) and self.sampling_rate_hz > 0):
            raise BadSamplingRate(f"sampling_rate_hz must be positive, got {self.sampling_rate_hz}")

    @classmethod
    def from_windows(cls, windows: Sequence[LabeledWindow], class_names, channel_names=None,
                     sampling_rate_hz=None, window_shape=None) -> "Dataset":
        if windows:
            first = windows[0].window
            channel_names = first.channel_names if channel_names is None else channel_names
            sampling_rate_hz = first.sampling_rate_hz if sampling_rate_hz is None else sampling_rate_hz
            for lw in windows:
                w = lw.window
                if (w.values.shape != first.values.shape or w.channel_names != first.channel_names
                        or w.sampling_rate_hz != first.sampling_rate_hz):
                    raise ShapeMismatch("all windows in a dataset must share shape, channels and rate")
            values = np.stack([lw.window.values for lw in windows])
        else:
            if channel_names is None or sampling_rate_hz is None or window_shape is None:
                raise ShapeMismatch("an empty dataset needs explicit channel names, rate and shape")
            values = np.zeros((0,) + tuple(window_shape))
        return cls(
            values=values,
            labels=[lw.label for lw in windows],
            subject_ids=[lw.subject_id for lw in windows],
            class_names=class_names,
            channel_names=channel_names,
            sampling_rate_hz=sampling_rate_hz,
        )

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def window_length(self) -> int:
        return self.values.shape[2]

    @cached_property
    def subject_array(self) -> np.ndarray:
        return np.array(self.subject_ids, dtype=object)

    @property
    def subjects(self) -> Tuple[str, ...]:
        """Distinct subject ids in order of first appearance."""
        return tuple(dict.fromkeys(self.subject_ids))

    @cached_property
    def windows(self) -> Tuple[LabeledWindow, ...]:
        return tuple(
            LabeledWindow(self.window(i), int(self.labels[i]), self.subject_ids[i])
            for i in range(len(self))
        )

    def window(self, i: int) -> Window:
        return Window(self.values[i], self.channel_names, self.sampling_rate_hz)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return self.replace_values(self.values[index], labels=self.labels[index],
                                   subject_ids=[self.subject_ids[i] for i in index])

    def replace_values(self, values, labels=None, subject_ids=None) -> "Dataset":
        return Dataset(
            values=values,
            labels=self.labels if labels is None else labels,
            subject_ids=self.subject_ids if subject_ids is None else subject_ids,
            class_names=self.class_names,
            channel_names=self.channel_names,
            sampling_rate_hz=self.sampling_rate_hz,
        )


@dataclass(frozen=True, eq=False)
class NormStats(_ArrayEq):
    """Per-channel mean and population variance from a training split."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen_array(self.mean))
        object.__setattr__(self, "var", _frozen_array(self.var))
        if self.mean.ndim != 1 or self.mean.shape != self.var.shape:
            raise ShapeMismatch("mean and var must be matching 1-D arrays")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.var))):
            raise NonFinite("normalization stats must be finite")
        if np.any(self.var < 0):
            raise BadRange("variances must be >= 0")

    @cached_property
    def _scale(self) -> np.ndarray:
        # zero-variance channels are centred but not scaled
        return np.where(self.var > 0, np.sqrt(self.var), 1.0)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """z-score an array whose second-to-last axis is the channel axis."""
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean[:, None]) / self._scale[:, None]

    def normalized_variance(self) -> np.ndarray:
        """Per-channel signal variance in normalized units (1, or 0 for constant channels)."""
        return np.where(self.var > 0, 1.0, 0.0)


# --------------------------------------------------------------------------
# transform specs
# --------------------------------------------------------------------------


def _check_segment(start_frac, ratio, ratio_min_open=False):
    if not (0.0 <= start_frac < 1.0):
        raise BadRange(f"start_frac must lie in [0, 1), got {start_frac}")
    if ratio_min_open:
        if not (0.0 < ratio <= 1.0):
            raise BadRange(f"ratio must lie in (0, 1], got {ratio}")
    elif not (0.0 <= ratio <= 1.0):
        raise BadRange(f"ratio must lie in [0, 1], got {ratio}")
    if start_frac + ratio > 1.0 + _FRAC_EPS:
        raise BadRange(f"start_frac + ratio must be <= 1, got {start_frac} + {ratio}")


def _channel_tuple(channels, allow_empty):
    chans = tuple(sorted({int(c) for c in channels}))
    if not chans and not allow_empty:
        raise BadChannel("channel selection must be nonempty")
    if chans and chans[0] < 0:
        raise BadChannel(f"negative channel index {chans[0]}")
    return chans


@dataclass(frozen=True)
class Jitter:
    """Additive Gaussian noise with variance ``alpha * sigma2``, optionally band-limited."""

    alpha: float
    band: Optional[Tuple[float, float]] = None
    kind: ClassVar[str] = "Jitter"

    def __post_init__(self):
        alpha = float(self.alpha)
        if not math.isfinite(alpha) or alpha < 0:
            raise NegativeAlpha(f"alpha must be finite and >= 0, got {self.alpha}")
        object.__setattr__(self, "alpha", alpha)
        if self.band is not None:
            lo, hi = (float(f) for f in self.band)
            if not (math.isfinite(lo) and math.isfinite(hi) and 0.0 <= lo < hi):
                raise BadBand(f"band must satisfy 0 <= f_lo < f_hi, got {self.band}")
            object.__setattr__(self, "band", (lo, hi))

    def check(self, n_channels: int, sampling_rate_hz: float) -> None:
        if self.band is not None and self.band[1] > sampling_rate_hz / 2:
            raise BadBand(f"band {self.band} exceeds Nyquist {sampling_rate_hz / 2} Hz")


@dataclass(frozen=True)
class Clip:
    """Drop ``[start, start+len)`` and refill it by linear interpolation."""

    start_frac: float
    ratio: float
    kind: ClassVar[str] = "Clip"

    def __post_init__(self):
        object.__setattr__(self, "start_frac", float(self.start_frac))
        object.__setattr__(self, "ratio", float(self.ratio))
        _check_segment(self.start_frac, self.ratio)

    def check(self, n_channels, sampling_rate_hz):
        pass


@dataclass(frozen=True)
class SegmentOut:
    """Zero a time segment on the selected channels."""

    channels: Tuple[int, ...]
    start_frac: float
    ratio: float
    kind: ClassVar[str] = "SegmentOut"

    def __post_init__(self):
        object.__setattr__(self, "channels", _channel_tuple(self.channels, allow_empty=False))
        object.__setattr__(self, "start_frac", float(self.start_frac))
        object.__setattr__(self, "ratio", float(self.ratio))
        _check_segment(self.start_frac, self.ratio)

    def check(self, n_channels, sampling_rate_hz):
        if self.channels[-1] >= n_channels:
            raise BadChannel(f"channel {self.channels[-1]} out of range for C={n_channels}")


@dataclass(frozen=True)
class SensorOut:
    """Zero whole channels."""

    channels: Tuple[int, ...]
    kind: ClassVar[str] = "SensorOut"

    def __post_init__(self):
        object.__setattr__(self, "channels", _channel_tuple(self.channels, allow_empty=False))

    def check(self, n_channels, sampling_rate_hz):
        if self.channels[-1] >= n_channels:
            raise BadChannel(f"channel {self.channels[-1]} out of range for C={n_channels}")


@dataclass(frozen=True)
class KeepOnly:
    """Zero everything outside one time segment (used for sufficiency checks)."""

    start_frac: float
    ratio: float
    kind: ClassVar[str] = "KeepOnly"

    def __post_init__(self):
        object.__setattr__(self, "start_frac", float(self.start_frac))
        object.__setattr__(self, "ratio", float(self.ratio))
        _check_segment(self.start_frac, self.ratio, ratio_min_open=True)

    def check(self, n_channels, sampling_rate_hz):
        pass


TransformSpec = Union[Jitter, Clip, SegmentOut, SensorOut, KeepOnly]
SPEC_KINDS = {cls.kind: cls for cls in (Jitter, Clip, SegmentOut, SensorOut, KeepOnly)}


# --------------------------------------------------------------------------
# prediction records
# --------------------------------------------------------------------------


def _check_simplex(probs: np.ndarray, what: str) -> None:
    if probs.ndim != 1 or probs.size < 2:
        raise ShapeMismatch(f"{what} must be a 1-D vector over K >= 2 classes")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise BadRange(f"{what} has negative or non-finite entries")
    if abs(float(probs.sum()) - 1.0) > SIMPLEX_TOL:
        raise BadRange(f"{what} sums to {probs.sum()!r}, not 1")


@dataclass(frozen=True, eq=False)
class VariantVote(_ArrayEq):
    spec: TransformSpec
    prediction: int
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen_array(self.probs))
        object.__setattr__(self, "prediction", int(self.prediction))
        _check_simplex(self.probs, "variant probs")


@dataclass(frozen=True, eq=False)
class VoteRecord(_ArrayEq):
    """Base prediction plus every test-time variant's vote, and the aggregate."""

    base_prediction: int
    base_probs: np.ndarray
    variant_votes: Tuple[VariantVote, ...]
    final_prediction: int

    def __post_init__(self):
        object.__setattr__(self, "base_probs", _frozen_array(self.base_probs))
        object.__setattr__(self, "variant_votes", tuple(self.variant_votes))
        object.__setattr__(self, "base_prediction", int(self.base_prediction))
        object.__setattr__(self, "final_prediction", int(self.final_prediction))
        _check_simplex(self.base_probs, "base probs")
        k = self.base_probs.size
        for v in self.variant_votes:
            if v.probs.size != k:
                raise ShapeMismatch("all probability vectors must have the same length K")
        for c in (self.base_prediction, self.final_prediction, *(v.prediction for v in self.variant_votes)):
            if not 0 <= c < k:
                raise BadLabel(f"class index {c} outside [0, {k})")

    @property
    def votes(self) -> Tuple[int, ...]:
        return (self.base_prediction,) + tuple(v.prediction for v in self.variant_votes)

    def vote_counts(self) -> np.ndarray:
        return np.bincount(self.votes, minlength=self.base_probs.size)


@dataclass(frozen=True, eq=False)
class Explanation(_ArrayEq):
    """Flip-based explanation of one prediction.

    necessity[t]         fraction of occluding probes covering t that flipped the prediction
    non_essential_mask   t was occluded at least once and never caused a flip
    sufficient_segments  disjoint [start, end) ranges whose retention alone keeps the prediction
    band_sensitivity     (f_lo, f_hi, flip_rate) per frequency band under band-limited jitter
    channel_flips        whether zeroing each single channel flips the prediction
    """

    necessity: np.ndarray
    non_essential_mask: np.ndarray
    sufficient_segments: Tuple[Tuple[int, int], ...]
    band_sensitivity: Tuple[Tuple[float, float, float], ...]
    predicted_class: int
    n_variants_used: int
    channel_flips: Tuple[bool, ...] = field(default=())

    def __post_init__(self):
        nec = _frozen_array(self.necessity)
        mask = _frozen_array(self.non_essential_mask, dtype=bool)
        object.__setattr__(self, "necessity", nec)
        object.__setattr__(self, "non_essential_mask", mask)
        object.__setattr__(self, "sufficient_segments",
                           tuple((int(a), int(b)) for a, b in self.sufficient_segments))
        object.__setattr__(self, "band_sensitivity",
                           tuple((float(a), float(b), float(r)) for a, b, r in self.band_sensitivity))
        object.__setattr__(self, "channel_flips", tuple(bool(f) for f in self.channel_flips))
        object.__setattr__(self, "predicted_class", int(self.predicted_class))
        object.__setattr__(self, "n_variants_used", int(self.n_variants_used))

        length = nec.size
        if nec.ndim != 1 or mask.shape != nec.shape:
            raise ShapeMismatch("necessity and non_essential_mask must be length-T vectors")
        if np.any(~np.isfinite(nec)) or np.any((nec < 0) | (nec > 1)):
            raise BadRange("necessity values must lie in [0, 1]")
        if np.any(nec[mask] != 0):
            raise BadRange("non-essential timesteps must have zero necessity")
        prev_end = 0
        for start, end in self.sufficient_segments:
            if not (prev_end <= start < end <= length):
                raise BadRange("sufficient segments must be sorted, disjoint and inside [0, T)")
            prev_end = end
        for lo, hi, rate in self.band_sensitivity:
            if not (0 <= lo < hi) or not (0.0 <= rate <= 1.0):
                raise BadRange(f"bad band sensitivity entry {(lo, hi, rate)}")
