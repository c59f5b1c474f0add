"""Recordings, windowing, normalization, LOSO folds and synthetic corpora.

Interchange corpus layout (``schema_version`` 1)::

    manifest.json          {"schema_version": 1, "sampling_rate_hz": ..., "class_names": [...],
                            "recordings": [{"file": "s01.csv", "subject_id": "s01"}, ...],
                            "windowing": {"length": ..., "train_overlap": ..., "test_overlap": ...}}
    s01.csv                header ``<channel>,...,label``; one row per timestep;
                           empty label cell = unlabeled (null)

``windowing`` is optional and only supplies defaults.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    BadRange,
    BadSpec,
    LabelMismatch,
    MalformedInput,
    ParseError,
    ShapeMismatch,
    TooFewSubjects,
    WindowTooLong,
)
from .transforms import default_bands, round_half_up
from .types import Dataset, LabeledWindow, NormStats, Window

MANIFEST_VERSION = 1
NULL_LABEL = -1


@dataclass(frozen=True, eq=False)
class Recording:
    """One continuous recording. ``labels`` holds a class index per timestep, -1 for null."""

    samples: np.ndarray
    sampling_rate_hz: float
    subject_id: str
    labels: np.ndarray
    channel_names: Tuple[str, ...]

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if samples.ndim != 2 or labels.shape != (samples.shape[0],):
            raise ShapeMismatch("samples must be [T_raw, C] with one label per timestep")
        if samples.shape[1] != len(self.channel_names):
            raise ShapeMismatch("channel_names must match the sample columns")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


# --------------------------------------------------------------------------
# CSV corpus
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Manifest:
    path: Path
    sampling_rate_hz: float
    class_names: Tuple[str, ...]
    recordings: Tuple[Tuple[str, str], ...]
    windowing: Dict[str, float] = field(default_factory=dict)


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, str(path), exc.lineno, exc.colno) from None
    try:
        if doc.get("schema_version") != MANIFEST_VERSION:
            raise MalformedInput(f"unsupported manifest schema_version {doc.get('schema_version')!r}",
                                 f"{path}:$.schema_version")
        recordings = tuple((r["file"], str(r["subject_id"])) for r in doc.get("recordings", []))
        return Manifest(path, float(doc["sampling_rate_hz"]), tuple(doc["class_names"]),
                        recordings, dict(doc.get("windowing", {})))
    except (KeyError, TypeError) as exc:
        raise MalformedInput(f"manifest missing or bad field {exc}", str(path)) from None


def read_recording(path, subject_id: str, sampling_rate_hz: float, n_classes: int) -> Recording:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", str(path), 1, 1) from None
        if not header or header[-1].strip() != "label":
            raise LabelMismatch(f"{path}: last column must be 'label', header is {header}")
        n_channels = len(header) - 1
        if n_channels < 1:
            raise ParseError("no channel columns", str(path), 1, 1)
        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != n_channels + 1:
                raise ParseError(f"expected {n_channels + 1} columns, got {len(row)}", str(path), line_no,
                                 len(row) + 1)
            values = []
            for col, cell in enumerate(row[:-1], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"not a number: {cell!r}", str(path), line_no, col) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value {cell!r}", str(path), line_no, col)
                values.append(v)
            cell = row[-1].strip()
            if cell == "":
                label = NULL_LABEL
            else:
                try:
                    label = int(cell)
                except ValueError:
                    raise ParseError(f"bad label {cell!r}", str(path), line_no, n_channels + 1) from None
                if not 0 <= label < n_classes:
                    raise LabelMismatch(f"{path}:{line_no}: label {label} outside [0, {n_classes})")
            rows.append(values)
            labels.append(label)
    samples = np.array(rows, dtype=np.float64).reshape(len(rows), n_channels)
    return Recording(samples, sampling_rate_hz, subject_id, np.array(labels, dtype=np.int64),
                     tuple(h.strip() for h in header[:-1]))


def load_csv_corpus(manifest_path) -> List[Recording]:
    manifest = read_manifest(manifest_path)
    base = manifest.path.parent
    return [read_recording(base / f, subject, manifest.sampling_rate_hz, len(manifest.class_names))
            for f, subject in manifest.recordings]


def _fmt(v: float) -> str:
    return repr(float(v))


def write_corpus(dataset: Dataset, out_dir, windowing: Optional[dict] = None) -> Path:
    """Write one CSV recording per subject (windows concatenated in order) plus the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for subject in dataset.subjects:
        idx = np.flatnonzero(dataset.subject_array == subject)
        fname = f"{subject}.csv"
        with (out / fname).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(dataset.channel_names) + ["label"])
            for i in idx:
                label = str(int(dataset.labels[i]))
                for t in range(dataset.window_length):
                    writer.writerow([_fmt(v) for v in dataset.values[i, :, t]] + [label])
        entries.append({"file": fname, "subject_id": subject})
    manifest = {
        "schema_version": MANIFEST_VERSION,
        "sampling_rate_hz": dataset.sampling_rate_hz,
        "class_names": list(dataset.class_names),
        "recordings": entries,
    }
    if windowing:
        manifest["windowing"] = windowing
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# windowing
# --------------------------------------------------------------------------


def window_stride(length: int, overlap: float) -> int:
    return max(1, round_half_up(length * (1.0 - overlap)))


def window_starts(n_samples: int, length: int, overlap: float) -> List[int]:
    if not 0.0 <= overlap < 1.0:
        raise BadRange(f"overlap must lie in [0, 1), got {overlap}")
    if length > n_samples:
        raise WindowTooLong(f"window length {length} exceeds recording length {n_samples}")
    if length < 2:
        raise ShapeMismatch("window length must be >= 2")
    return list(range(0, n_samples - length + 1, window_stride(length, overlap)))


def majority_label(labels: np.ndarray) -> Optional[int]:
    """Most frequent class (ties to the lowest index); None when null labels are strictly most frequent."""
    counts = Counter(int(v) for v in labels)
    nulls = counts.pop(NULL_LABEL, 0)
    if not counts:
        return None
    best = min(counts, key=lambda c: (-counts[c], c))
    return None if nulls > counts[best] else best


def sliding_windows(rec: Recording, length: int, overlap: float) -> List[LabeledWindow]:
    out = []
    for start in window_starts(rec.n_samples, length, overlap):
        label = majority_label(rec.labels[start : start + length])
        if label is None:
            continue
        window = Window(rec.samples[start : start + length].T, rec.channel_names, rec.sampling_rate_hz)
        out.append(LabeledWindow(window, label, rec.subject_id))
    return out


def windows_to_dataset(recordings: Sequence[Recording], class_names, length: int,
                       overlap: float) -> Dataset:
    windows = [lw for rec in recordings for lw in sliding_windows(rec, length, overlap)]
    if not windows:
        if not recordings:
            raise ShapeMismatch("no recordings to window")
        rec = recordings[0]
        return Dataset.from_windows([], class_names, rec.channel_names, rec.sampling_rate_hz,
                                    (len(rec.channel_names), length))
    return Dataset.from_windows(windows, class_names)


def load_dataset(manifest_path, length: Optional[int] = None, overlap: Optional[float] = None,
                 split: str = "train") -> Dataset:
    """Window a CSV corpus; ``length`` and ``overlap`` default to the manifest's ``windowing`` block.

    ``split`` picks ``train_overlap`` or ``test_overlap`` from that block.
    """
    manifest = read_manifest(manifest_path)
    win = manifest.windowing
    if length is None:
        if "length" not in win:
            raise MalformedInput("no window length given and the manifest has no windowing.length",
                                 f"{manifest.path}:$.windowing")
        length = int(win["length"])
    if overlap is None:
        overlap = float(win.get(f"{split}_overlap", 0.0))
    return windows_to_dataset(load_csv_corpus(manifest_path), manifest.class_names, length, overlap)


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------


def _as_block(windows) -> np.ndarray:
    if isinstance(windows, Dataset):
        return windows.values
    if isinstance(windows, np.ndarray):
        return windows
    return np.stack([w.window.values if isinstance(w, LabeledWindow) else w.values for w in windows])


def fit_norm_stats(windows) -> NormStats:
    """Per-channel mean and population variance over every timestep of every window."""
    block = _as_block(windows)
    if block.shape[0] == 0:
        raise ShapeMismatch("normalization stats need at least one window")
    mean = block.mean(axis=(0, 2))
    var = ((block - mean[:, None]) ** 2).mean(axis=(0, 2))
    return NormStats(mean, var)


def apply_norm(stats: NormStats, w: Window) -> Window:
    return w.with_values(stats.apply(w.values))


# --------------------------------------------------------------------------
# LOSO
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    subject: str
    train: Dataset
    val: Dataset
    test: Dataset


def stratified_split(labels: np.ndarray, frac: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask selecting about ``frac`` of each class (at least one where a class has two or more)."""
    mask = np.zeros(len(labels), dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            continue
        k = min(idx.size - 1, max(1, round_half_up(frac * idx.size)))
        mask[rng.choice(idx, size=k, replace=False)] = True
    if not mask.any() and len(labels) > 1:
        mask[rng.integers(len(labels))] = True
    return mask


def train_val_split(dataset: Dataset, val_frac: float, rng: np.random.Generator):
    mask = stratified_split(dataset.labels, val_frac, rng)
    return dataset.subset(~mask), dataset.subset(mask)


def loso_folds(dataset: Dataset, val_frac: float = 0.1, seed: int = 0) -> List[Fold]:
    """One fold per subject: that subject is the test set, a stratified slice of the rest is validation."""
    subjects = dataset.subjects
    if len(subjects) < 2:
        raise TooFewSubjects(f"LOSO needs at least 2 subjects, got {len(subjects)}")
    folds = []
    for i, subject in enumerate(subjects):
        is_test = dataset.subject_array == subject
        rest = dataset.subset(~is_test)
        train, val = train_val_split(rest, val_frac, np.random.default_rng([seed, i]))
        folds.append(Fold(subject, train, val, dataset.subset(is_test)))
    return folds


# --------------------------------------------------------------------------
# synthetic corpora
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-ground-truth generator settings.

    ``mode="segment"``: class ``c`` carries a sine at ``carriers_hz[c]`` only inside
    ``segment``; outside it every class is pure noise.
    ``mode="band"``: the class carrier spans the whole window.

    Classes listed in ``silent_classes`` carry no sine at all (noise only), which
    makes the remaining carriers the only discriminative bands.

    Every subject gets a fixed gain drawn from ``1 +/- subject_gain_jitter``;
    every window gets a phase offset drawn from ``+/- phase_jitter`` radians.
    Without explicit carriers, each class sits on the bin-aligned centre of one of
    ``n_bands`` equal bands up to Nyquist, spread as far apart as possible.
    """

    n_classes: int = 4
    n_channels: int = 3
    window_length: int = 100
    sampling_rate_hz: float = 50.0
    mode: str = "segment"
    carriers_hz: Optional[Tuple[float, ...]] = None
    amplitude: float = 1.0
    segment: Tuple[int, int] = (40, 60)
    noise_floor: float = 0.5
    subjects: int = 6
    windows_per_subject_per_class: int = 50
    subject_gain_jitter: float = 0.2
    phase_jitter: float = 0.0
    n_bands: int = 8
    silent_classes: Tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.carriers_hz is not None:
            object.__setattr__(self, "carriers_hz", tuple(float(f) for f in self.carriers_hz))
        object.__setattr__(self, "segment", tuple(int(s) for s in self.segment))
        object.__setattr__(self, "silent_classes", tuple(sorted({int(c) for c in self.silent_classes})))
        self.validate()

    def validate(self) -> None:
        def bad(field_name, msg):
            raise BadSpec(f"{field_name}: {msg}")

        if self.n_classes < 2:
            bad("n_classes", "need at least 2 classes")
        if self.n_channels < 1:
            bad("n_channels", "need at least 1 channel")
        if self.window_length < 2:
            bad("window_length", "must be >= 2")
        if not self.sampling_rate_hz > 0:
            bad("sampling_rate_hz", "must be positive")
        if self.mode not in ("segment", "band"):
            bad("mode", f"must be 'segment' or 'band', got {self.mode!r}")
        if self.carriers_hz is not None:
            if len(self.carriers_hz) != self.n_classes:
                bad("carriers_hz", f"need one carrier per class ({self.n_classes})")
            nyquist = self.sampling_rate_hz / 2
            for f in self.carriers_hz:
                if not 0 < f < nyquist:
                    bad("carriers_hz", f"carrier {f} Hz must lie in (0, Nyquist={nyquist})")
        s, e = self.segment
        if not 0 <= s < e <= self.window_length:
            bad("segment", f"{self.segment} must lie within [0, {self.window_length}]")
        if self.subjects < 1:
            bad("subjects", "must be >= 1")
        if self.windows_per_subject_per_class < 1:
            bad("windows_per_subject_per_class", "must be >= 1")
        if self.noise_floor < 0 or self.amplitude < 0:
            bad("noise_floor", "noise_floor and amplitude must be >= 0")
        if not 0 <= self.subject_gain_jitter < 1:
            bad("subject_gain_jitter", "must lie in [0, 1)")
        if any(not 0 <= c < self.n_classes for c in self.silent_classes):
            bad("silent_classes", f"class indices must lie in [0, {self.n_classes})")
        if len(self.silent_classes) >= self.n_classes:
            bad("silent_classes", "at least one class must carry a signal")
        if self.n_bands < self.n_classes and self.carriers_hz is None:
            bad("n_bands", "need at least one band per class for default carriers")

    def resolved_carriers(self) -> Tuple[float, ...]:
        if self.carriers_hz is not None:
            return self.carriers_hz
        bands = default_bands(self.sampling_rate_hz, self.n_bands)
        picks = np.round(np.linspace(0, self.n_bands - 1, self.n_classes)).astype(int)
        resolution = self.sampling_rate_hz / self.window_length
        out = []
        for b in picks:
            lo, hi = bands[b]
            f = round((lo + hi) / 2 / resolution) * resolution
            out.append(float(min(max(f, lo + resolution if lo == 0 else lo), hi)))
        return tuple(out)

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known - {"schema_version"}
        if unknown:
            raise BadSpec(f"unknown field(s) {sorted(unknown)}")
        try:
            return cls(**{k: v for k, v in doc.items() if k in known})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, BadSpec):
                raise
            raise BadSpec(str(exc)) from None

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["segment"] = list(self.segment)
        doc["silent_classes"] = list(self.silent_classes)
        if self.carriers_hz is not None:
            doc["carriers_hz"] = list(self.carriers_hz)
        return {"schema_version": 1, **doc}


def plant_metadata(spec: SyntheticSpec) -> dict:
    carriers = spec.resolved_carriers()
    meta = {"schema_version": 1, "mode": spec.mode, "carriers_hz": list(carriers),
            "sampling_rate_hz": spec.sampling_rate_hz, "window_length": spec.window_length}
    if spec.mode == "segment":
        meta["segment"] = list(spec.segment)
    meta["silent_classes"] = list(spec.silent_classes)
    bands = default_bands(spec.sampling_rate_hz, spec.n_bands)
    meta["carrier_bands"] = [next(i for i, (lo, hi) in enumerate(bands) if lo <= f <= hi)
                             for f in carriers]
    return meta


def generate_synthetic(spec: SyntheticSpec, rng: Optional[np.random.Generator] = None) -> Dataset:
    """Windows ordered subject-major, then class, then draw index."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    carriers = spec.resolved_carriers()
    c_, t_ = spec.n_channels, spec.window_length
    n = spec.windows_per_subject_per_class
    t = np.arange(t_) / spec.sampling_rate_hz
    envelope = np.ones(t_)
    if spec.mode == "segment":
        envelope = np.zeros(t_)
        envelope[spec.segment[0] : spec.segment[1]] = 1.0
        t = t - spec.segment[0] / spec.sampling_rate_hz
    channel_phase = np.arange(c_)[:, None] * (np.pi / 3)
    blocks, labels, subjects = [], [], []
    for s in range(spec.subjects):
        gain = 1.0 + rng.uniform(-spec.subject_gain_jitter, spec.subject_gain_jitter)
        for c, f in enumerate(carriers):
            phase = rng.uniform(-spec.phase_jitter, spec.phase_jitter, size=(n, 1, 1))
            wave = np.sin(2 * np.pi * f * t[None, None, :] + channel_phase[None] + phase)
            amplitude = 0.0 if c in spec.silent_classes else spec.amplitude
            signal = amplitude * gain * wave * envelope
            noise = spec.noise_floor * rng.standard_normal((n, c_, t_))
            blocks.append(signal + noise)
            labels.extend([c] * n)
            subjects.extend([f"s{s + 1:02d}"] * n)
    return Dataset(
        values=np.concatenate(blocks),
        labels=labels,
        subject_ids=subjects,
        class_names=[f"class{c}" for c in range(spec.n_classes)],
        channel_names=[f"ch{c}" for c in range(c_)],
        sampling_rate_hz=spec.sampling_rate_hz,
    )
