"""Flip-based explanations.

All scores are reconstructions built from one primitive: does a transform
change the argmax class of the untransformed window?

* necessity[t]: share of all-channel SegmentOut probes covering ``t`` that flip.
  Probes are laid out in tiling passes with random offsets, so every timestep is
  covered at least :data:`MIN_COVERAGE` times.
* non-essential mask: ``t`` is covered by at least one SegmentOut or Clip probe
  and none of them flips. Every SegmentOut probe is also in this pool, so a
  masked timestep always has zero necessity.
* sufficient segments: KeepOnly windows of length ``min_ratio * T`` scanned at
  stride ``T / 20`` that keep the prediction, merged into disjoint ranges.
* band sensitivity: flip rate under band-limited jitter, per frequency band.

Transforms run on normalized windows, the space the model was trained in.
Every probe must be admissible for the artifact: a member of its frozen set, or
an instance of a trained kind with parameters inside the trained ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
from xml.etree import ElementTree as ET

import numpy as np

from .errors import BadBand, BadConfig, ForeignTransform, ShapeMismatch
from .transforms import apply_array, default_bands, round_half_up, segment_bounds
from .types import Clip, Explanation, Jitter, KeepOnly, SegmentOut, SensorOut, TransformSpec, Window

MIN_COVERAGE = 5
SUFFICIENCY_STRIDE_DIVISOR = 20
_RANGE_TOL = 1e-9


# --------------------------------------------------------------------------
# admissibility
# --------------------------------------------------------------------------


def _in_range(value: float, bounds: Tuple[float, float]) -> bool:
    return bounds[0] - _RANGE_TOL <= value <= bounds[1] + _RANGE_TOL


def _effective_ratio(spec, length: Optional[int]) -> float:
    if length is None:
        return spec.ratio
    return segment_bounds(spec.start_frac, spec.ratio, length)[1] / length


def is_admissible(artifact, spec: TransformSpec) -> bool:
    """Whether ``spec`` may be applied at prediction/explanation time for ``artifact``.

    KeepOnly is never used in training; it only tests sufficiency and is always
    allowed. Zero-strength jitter is the identity and is always allowed.
    """
    if spec in artifact.transform_set or isinstance(spec, KeepOnly):
        return True
    if isinstance(spec, Jitter) and spec.alpha == 0.0:
        return True
    cfg = artifact.hyper.transforms
    if spec.kind not in cfg.kinds:
        return False
    n_channels, length = artifact.input_shape
    if isinstance(spec, Jitter):
        return _in_range(spec.alpha, cfg.alpha) and (
            spec.band is None or spec.band[1] <= artifact.sampling_rate_hz / 2 + _RANGE_TOL)
    if isinstance(spec, Clip):
        return _in_range(_effective_ratio(spec, length), cfg.clip_ratio)
    if isinstance(spec, SegmentOut):
        return _in_range(_effective_ratio(spec, length), cfg.segment_ratio)
    if isinstance(spec, SensorOut):
        lo, hi = (max(1, round_half_up(r * n_channels)) for r in cfg.sensor_ratio)
        return lo <= len(spec.channels) <= hi
    return False


def assert_admissible(artifact, spec: TransformSpec) -> None:
    if not is_admissible(artifact, spec):
        raise ForeignTransform(f"{spec!r} is neither in the artifact's transform set nor an instance "
                               f"of a trained kind within the trained parameter ranges")


# --------------------------------------------------------------------------
# probing helpers
# --------------------------------------------------------------------------


def _normalized(artifact, w) -> np.ndarray:
    x = w.values if isinstance(w, Window) else np.asarray(w, dtype=np.float64)
    if x.shape != tuple(artifact.input_shape):
        raise ShapeMismatch(f"expected a window of shape {tuple(artifact.input_shape)}, got {x.shape}")
    return artifact.normalize(x)


def _classify(artifact, z: np.ndarray) -> np.ndarray:
    return np.argmax(artifact.predict_proba_normalized(z), axis=-1)


def _run_specs(artifact, z: np.ndarray, specs: Sequence[TransformSpec], rng=None) -> np.ndarray:
    """Predicted class of ``z`` under each spec, after the admissibility check."""
    if not specs:
        return np.zeros(0, dtype=np.int64)
    sigma2 = artifact.sigma2()
    fs = artifact.sampling_rate_hz
    block = np.empty((len(specs),) + z.shape)
    for i, spec in enumerate(specs):
        assert_admissible(artifact, spec)
        block[i] = apply_array(spec, z, sigma2, rng, fs)
    return _classify(artifact, block)


def tiling_starts(length: int, seg_len: int, offset: int) -> List[int]:
    """Starts of ``seg_len``-long tiles covering ``[0, length)``, shifted by ``offset`` and clamped."""
    starts = []
    s = offset - seg_len if offset > 0 else 0
    while True:
        c = min(max(s, 0), length - seg_len)
        if not starts or c != starts[-1]:
            starts.append(c)
        if c + seg_len >= length:
            return starts
        s += seg_len


def probe_starts(length: int, seg_len: int, n_probes: int, rng: np.random.Generator,
                 min_passes: int = MIN_COVERAGE) -> List[int]:
    """Stratified probe starts: whole tiling passes with random offsets.

    Runs at least ``min_passes`` passes and enough to reach ``n_probes``.
    """
    if not 1 <= seg_len <= length:
        raise BadConfig(f"probe length {seg_len} must lie in [1, {length}]")
    per_pass = math.ceil(length / seg_len)
    passes = max(min_passes, math.ceil(n_probes / per_pass))
    out = []
    for _ in range(passes):
        out.extend(tiling_starts(length, seg_len, int(rng.integers(seg_len))))
    return out


def _probe_length(ratio: float, length: int) -> int:
    n = round_half_up(ratio * length)
    if not 1 <= n <= length:
        raise BadConfig(f"ratio {ratio} gives an empty probe on T={length}")
    return n


def coverage(starts: Sequence[int], seg_len: int, length: int) -> np.ndarray:
    cov = np.zeros(length, dtype=np.int64)
    for s in starts:
        cov[s : s + seg_len] += 1
    return cov


@dataclass(frozen=True)
class ProbeResult:
    """Occlusion outcome: which timesteps each probe covered and whether it flipped."""

    cover: np.ndarray  # [P, T] bool
    flipped: np.ndarray  # [P] bool

    def necessity(self) -> np.ndarray:
        hits = self.cover.sum(axis=0)
        flips = (self.cover & self.flipped[:, None]).sum(axis=0)
        return np.divide(flips, hits, out=np.zeros(hits.shape), where=hits > 0)

    def non_essential(self) -> np.ndarray:
        covered = self.cover.any(axis=0)
        return covered & ~(self.cover & self.flipped[:, None]).any(axis=0)

    def __add__(self, other: "ProbeResult") -> "ProbeResult":
        return ProbeResult(np.concatenate([self.cover, other.cover]),
                           np.concatenate([self.flipped, other.flipped]))


def occlusion_probes(artifact, w, kind: str, ratio: float, n_probes: int, rng: np.random.Generator,
                     min_passes: int = MIN_COVERAGE, baseline: Optional[int] = None) -> ProbeResult:
    """Run stratified SegmentOut (all channels) or Clip probes of the given ratio."""
    z = _normalized(artifact, w)
    n_channels, length = z.shape
    seg_len = _probe_length(ratio, length)
    starts = probe_starts(length, seg_len, n_probes, rng, min_passes)
    if kind == "SegmentOut":
        specs = [SegmentOut(range(n_channels), s / length, seg_len / length) for s in starts]
    elif kind == "Clip":
        specs = [Clip(s / length, seg_len / length) for s in starts]
    else:
        raise BadConfig(f"occlusion probes are SegmentOut or Clip, not {kind!r}")
    if baseline is None:
        baseline = int(_classify(artifact, z[None])[0])
    preds = _run_specs(artifact, z, specs)
    cover = np.zeros((len(specs), length), dtype=bool)
    for i, spec in enumerate(specs):
        a, n = segment_bounds(spec.start_frac, spec.ratio, length)
        cover[i, a : a + n] = True
    return ProbeResult(cover, preds != baseline)


# --------------------------------------------------------------------------
# the four analyses
# --------------------------------------------------------------------------


def necessity_map(artifact, w, n_probes: int = 50, seg_ratio: float = 0.1,
                  rng: Optional[np.random.Generator] = None) -> np.ndarray:
    if n_probes < 1:
        raise BadConfig("n_probes must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    return occlusion_probes(artifact, w, "SegmentOut", seg_ratio, n_probes, rng).necessity()


def non_essential_mask(artifact, w, probes: ProbeResult) -> np.ndarray:
    """Timesteps covered by at least one probe in ``probes`` with no covering probe flipping."""
    if probes.cover.shape[1:] != (tuple(artifact.input_shape)[1],):
        raise ShapeMismatch("probe coverage does not match the window length")
    return probes.non_essential()


def merge_segments(segments: Sequence[Tuple[int, int]]) -> List[Tuple[int, int]]:
    """Union of half-open ranges as a sorted list of disjoint, non-touching ranges."""
    out: List[List[int]] = []
    for a, b in sorted(segments):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def sufficiency_starts(length: int, seg_len: int) -> List[int]:
    stride = max(1, round_half_up(length / SUFFICIENCY_STRIDE_DIVISOR))
    starts = list(range(0, length - seg_len + 1, stride))
    if starts[-1] != length - seg_len:
        starts.append(length - seg_len)
    return starts


def sufficient_segments(artifact, w, min_ratio: float = 0.25,
                        rng: Optional[np.random.Generator] = None) -> List[Tuple[int, int]]:
    """Merged KeepOnly windows that alone keep the prediction. ``rng`` is unused; the scan is exhaustive."""
    if not 0.0 < min_ratio <= 1.0:
        raise BadConfig(f"min_ratio must lie in (0, 1], got {min_ratio}")
    z = _normalized(artifact, w)
    length = z.shape[-1]
    seg_len = _probe_length(min_ratio, length)
    starts = sufficiency_starts(length, seg_len)
    specs = [KeepOnly(s / length, seg_len / length) for s in starts]
    baseline = int(_classify(artifact, z[None])[0])
    preds = _run_specs(artifact, z, specs)
    kept = []
    for spec, p in zip(specs, preds):
        if p == baseline:
            a, n = segment_bounds(spec.start_frac, spec.ratio, length)
            kept.append((a, a + n))
    return merge_segments(kept)


def check_bands(bands: Sequence[Tuple[float, float]], sampling_rate_hz: float) -> List[Tuple[float, float]]:
    """Bands must be sorted, non-overlapping and inside ``[0, Nyquist]``."""
    out = []
    prev_hi = 0.0
    for band in bands:
        lo, hi = (float(f) for f in band)
        if not (0.0 <= lo < hi <= sampling_rate_hz / 2 + _RANGE_TOL) or lo < prev_hi - _RANGE_TOL:
            raise BadBand(f"bands must be sorted, disjoint and inside [0, {sampling_rate_hz / 2}], "
                          f"got {band}")
        out.append((lo, hi))
        prev_hi = hi
    if not out:
        raise BadBand("at least one band is required")
    return out


def default_alpha(artifact) -> float:
    return artifact.hyper.transforms.alpha[1]


def band_sensitivity(artifact, w, bands=None, trials_per_band: int = 20, alpha: Optional[float] = None,
                     rng: Optional[np.random.Generator] = None) -> List[Tuple[float, float, float]]:
    """``(f_lo, f_hi, flip_rate)`` per band under band-limited jitter of strength ``alpha``."""
    if trials_per_band < 1:
        raise BadConfig("trials_per_band must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    fs = artifact.sampling_rate_hz
    bands = check_bands(default_bands(fs) if bands is None else bands, fs)
    alpha = default_alpha(artifact) if alpha is None else float(alpha)
    z = _normalized(artifact, w)
    baseline = int(_classify(artifact, z[None])[0])
    out = []
    for band in bands:
        spec = Jitter(alpha, band)
        assert_admissible(artifact, spec)
        block = apply_array(spec, np.broadcast_to(z, (trials_per_band,) + z.shape), artifact.sigma2(), rng, fs)
        flips = int(np.count_nonzero(_classify(artifact, block) != baseline))
        out.append((band[0], band[1], flips / trials_per_band))
    return out


def channel_flips(artifact, w) -> Tuple[bool, ...]:
    """Whether zeroing each single channel flips the prediction; empty if that probe is not admissible."""
    n_channels = artifact.input_shape[0]
    specs = [SensorOut((c,)) for c in range(n_channels)]
    if not all(is_admissible(artifact, s) for s in specs):
        return ()
    z = _normalized(artifact, w)
    baseline = int(_classify(artifact, z[None])[0])
    return tuple(bool(p != baseline) for p in _run_specs(artifact, z, specs))


# --------------------------------------------------------------------------
# bundle
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExplainConfig:
    n_probes: int = 50
    seg_ratio: float = 0.1
    clip_ratio: float = 0.2
    clip_passes: int = 2
    min_ratio: float = 0.25
    n_bands: int = 8
    bands: Optional[Tuple[Tuple[float, float], ...]] = None
    trials_per_band: int = 20
    alpha: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_probes < 1 or self.clip_passes < 0 or self.trials_per_band < 1 or self.n_bands < 1:
            raise BadConfig("probe, pass, band and trial counts must be positive")
        if self.bands is not None:
            object.__setattr__(self, "bands", tuple((float(a), float(b)) for a, b in self.bands))

    def resolved_bands(self, sampling_rate_hz: float) -> List[Tuple[float, float]]:
        return list(self.bands) if self.bands is not None else default_bands(sampling_rate_hz, self.n_bands)


def explain(artifact, w, cfg: ExplainConfig = ExplainConfig()) -> Explanation:
    rng = np.random.default_rng(cfg.seed)
    z = _normalized(artifact, w)
    baseline = int(_classify(artifact, z[None])[0])
    seg = occlusion_probes(artifact, w, "SegmentOut", cfg.seg_ratio, cfg.n_probes, rng, baseline=baseline)
    probes = seg
    if cfg.clip_passes:
        probes = seg + occlusion_probes(artifact, w, "Clip", cfg.clip_ratio, 1, rng,
                                        min_passes=cfg.clip_passes, baseline=baseline)
    sufficient = sufficient_segments(artifact, w, cfg.min_ratio)
    bands = band_sensitivity(artifact, w, cfg.resolved_bands(artifact.sampling_rate_hz),
                             cfg.trials_per_band, cfg.alpha, rng)
    flips = channel_flips(artifact, w)
    length = z.shape[-1]
    n_used = (len(probes.flipped) + len(sufficiency_starts(length, _probe_length(cfg.min_ratio, length)))
              + len(bands) * cfg.trials_per_band + len(flips))
    return Explanation(
        necessity=seg.necessity(),
        non_essential_mask=non_essential_mask(artifact, w, probes),
        sufficient_segments=sufficient,
        band_sensitivity=bands,
        predicted_class=baseline,
        n_variants_used=n_used,
        channel_flips=flips,
    )


def necessity_mass_inside(e: Explanation, start: int, end: int) -> float:
    """Share of total necessity falling in ``[start, end)``; 0 when nothing flips."""
    total = float(e.necessity.sum())
    return float(e.necessity[start:end].sum()) / total if total > 0 else 0.0


def top_band(e: Explanation) -> Tuple[float, float]:
    """Band with the highest flip rate (the first on ties)."""
    rates = [r for _, _, r in e.band_sensitivity]
    lo, hi, _ = e.band_sensitivity[int(np.argmax(rates))]
    return lo, hi


# --------------------------------------------------------------------------
# SVG rendering
# --------------------------------------------------------------------------

_W = 720.0
_PANEL_H = 110.0
_GAP = 24.0
_LEFT = 48.0
_RIGHT = 48.0


def _f(v: float) -> str:
    return f"{v:.2f}"


def _runs(mask: np.ndarray) -> List[Tuple[int, int, bool]]:
    """Maximal runs ``(start, end, value)`` of a boolean vector."""
    out = []
    start = 0
    for t in range(1, mask.size + 1):
        if t == mask.size or mask[t] != mask[start]:
            out.append((start, t, bool(mask[start])))
            start = t
    return out


def _axis_text(parent, x, y, text, anchor):
    el = ET.SubElement(parent, "text", {"x": _f(x), "y": _f(y), "font-size": "10",
                                        "font-family": "sans-serif", "text-anchor": anchor})
    el.text = text


def render_svg(e: Explanation, w: Window) -> str:
    """SVG document: one panel per channel plus a band-sensitivity panel.

    Channel panels draw the signal (dashed over non-essential timesteps), red
    rectangles over sufficient segments and a blue necessity area on a right
    axis spanning [0, 1]. The last panel plots flip rate per band centre in blue
    against its right axis. Output bytes depend only on the inputs.
    """
    values = np.asarray(w.values, dtype=np.float64)
    n_channels, length = values.shape
    if e.necessity.shape != (length,):
        raise ShapeMismatch("explanation length does not match the window")
    plot_w = _W - _LEFT - _RIGHT
    height = (n_channels + 1) * (_PANEL_H + _GAP) + _GAP
    svg = ET.Element("svg", {"xmlns": "http://www.w3.org/2000/svg", "width": _f(_W), "height": _f(height),
                             "viewBox": f"0 0 {_f(_W)} {_f(height)}"})
    title = ET.SubElement(svg, "title")
    title.text = f"explanation (predicted class {e.predicted_class})"

    def tx(t: float) -> float:
        return _LEFT + plot_w * t / max(length - 1, 1)

    for c in range(n_channels):
        top = _GAP + c * (_PANEL_H + _GAP)
        g = ET.SubElement(svg, "g", {"id": f"channel-{c}"})
        ET.SubElement(g, "rect", {"x": _f(_LEFT), "y": _f(top), "width": _f(plot_w), "height": _f(_PANEL_H),
                                  "fill": "none", "stroke": "#888888", "stroke-width": "0.5"})
        _axis_text(g, _LEFT, top - 6, w.channel_names[c], "start")
        for a, b in e.sufficient_segments:
            x0, x1 = tx(a), tx(min(b, length) - 1) if b - a > 1 else tx(a) + 1.0
            ET.SubElement(g, "rect", {"class": "sufficient", "x": _f(x0), "y": _f(top), "width": _f(x1 - x0),
                                      "height": _f(_PANEL_H), "fill": "#ff0000", "fill-opacity": "0.15"})
        pts = [f"{_f(tx(0))},{_f(top + _PANEL_H)}"]
        pts += [f"{_f(tx(t))},{_f(top + _PANEL_H * (1 - e.necessity[t]))}" for t in range(length)]
        pts.append(f"{_f(tx(length - 1))},{_f(top + _PANEL_H)}")
        ET.SubElement(g, "polygon", {"class": "necessity", "points": " ".join(pts), "fill": "#1f77b4",
                                     "fill-opacity": "0.25", "stroke": "none"})
        lo, hi = float(values[c].min()), float(values[c].max())
        span = hi - lo if hi > lo else 1.0

        def ty(v: float) -> float:
            return top + _PANEL_H - 6 - (_PANEL_H - 12) * (v - lo) / span

        for a, b, dashed in _runs(e.non_essential_mask):
            end = min(b + 1, length)
            line = " ".join(f"{_f(tx(t))},{_f(ty(values[c, t]))}" for t in range(a, end))
            attrs = {"class": "signal-dashed" if dashed else "signal", "points": line, "fill": "none",
                     "stroke": "#000000", "stroke-width": "1"}
            if dashed:
                attrs["stroke-dasharray"] = "4 3"
            ET.SubElement(g, "polyline", attrs)
        _axis_text(g, _W - _RIGHT + 4, top + 4, "1", "start")
        _axis_text(g, _W - _RIGHT + 4, top + _PANEL_H, "0", "start")

    top = _GAP + n_channels * (_PANEL_H + _GAP)
    g = ET.SubElement(svg, "g", {"id": "band-sensitivity"})
    ET.SubElement(g, "rect", {"x": _f(_LEFT), "y": _f(top), "width": _f(plot_w), "height": _f(_PANEL_H),
                              "fill": "none", "stroke": "#888888", "stroke-width": "0.5"})
    _axis_text(g, _LEFT, top - 6, "flip rate per band (Hz)", "start")
    if e.band_sensitivity:
        f_max = max(hi for _, hi, _ in e.band_sensitivity)
        pts = []
        for lo, hi, rate in e.band_sensitivity:
            x = _LEFT + plot_w * ((lo + hi) / 2) / f_max
            pts.append(f"{_f(x)},{_f(top + _PANEL_H * (1 - rate))}")
            _axis_text(g, x, top + _PANEL_H + 12, f"{(lo + hi) / 2:.3g}", "middle")
        ET.SubElement(g, "polyline", {"class": "band-curve", "points": " ".join(pts), "fill": "none",
                                      "stroke": "#1f77b4", "stroke-width": "1.5"})
    _axis_text(g, _W - _RIGHT + 4, top + 4, "1", "start")
    _axis_text(g, _W - _RIGHT + 4, top + _PANEL_H, "0", "start")
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(svg, encoding="unicode") + "\n"
