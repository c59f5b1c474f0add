"""Test-time augmentation voting.

Each window is predicted as-is and under ``n2`` specs drawn without
replacement from the artifact's frozen transform set. The final label is the
plain majority of the ``1 + n2`` class votes; ties go to the original
prediction if it is among the leaders, else to the lowest class index.

Randomness:

* Which specs a window gets depends only on ``(seed, window index)``; the
  ranking key of spec ``j`` for window ``i`` is a SplitMix64 hash of
  ``(seed, i, j)``. Results therefore do not depend on how a corpus is split
  into batches.
* A jitter spec's noise pattern is drawn once per prediction run from
  ``default_rng([seed, JITTER_STREAM, j])`` and shared by every window that
  votes with spec ``j``, so a variant equals ``transforms.apply(spec, w, sigma2, rng)``
  for that generator.

Both reference models start with an affine layer, so a variant's first-layer
activations are the original's plus a correction over only the inputs the
transform changed. Variants are scored that way instead of by full forward
passes; the result matches direct evaluation up to float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ForeignTransform, ShapeMismatch, TooManyVariants
from .model import softmax
from .training import ModelArtifact
from .transforms import (
    clip_array,
    jitter_noise,
    keep_only_array,
    segment_bounds,
)
from .types import Clip, Jitter, KeepOnly, SegmentOut, SensorOut, TransformSpec, VariantVote, VoteRecord, Window

JITTER_STREAM = 0x4A17

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + _GOLDEN
        x = (x ^ (x >> np.uint64(30))) * _MIX1
        x = (x ^ (x >> np.uint64(27))) * _MIX2
        return x ^ (x >> np.uint64(31))


def select_variants(seed: int, window_indices, set_size: int, n2: int) -> np.ndarray:
    """``[N, n2]`` spec indices: for each window, the ``n2`` lowest hash keys among the set."""
    idx = np.asarray(window_indices, dtype=np.uint64)
    seed_key = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    window_key = _splitmix64(seed_key ^ idx)
    keys = _splitmix64(window_key[:, None] ^ np.arange(set_size, dtype=np.uint64)[None, :])
    return np.argsort(keys, axis=1, kind="stable")[:, :n2]


def spec_rng(seed: int, spec_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, JITTER_STREAM, spec_index])


def majority_vote(votes: Sequence[int], n_classes: int) -> int:
    """Winner of ``votes`` where ``votes[0]`` is the original sample's class."""
    counts = np.bincount(np.asarray(votes), minlength=n_classes)
    leaders = np.flatnonzero(counts == counts.max())
    return int(votes[0]) if votes[0] in leaders else int(leaders[0])


def aggregate_votes(base: np.ndarray, variants: np.ndarray, n_classes: int) -> np.ndarray:
    """Vectorized :func:`majority_vote` over rows of ``[base | variants]``."""
    n = base.shape[0]
    counts = np.zeros((n, n_classes), dtype=np.int64)
    rows = np.repeat(np.arange(n), 1 + variants.shape[1])
    np.add.at(counts, (rows, np.column_stack([base, variants]).ravel()), 1)
    leaders = counts == counts.max(axis=1, keepdims=True)
    return np.where(leaders[np.arange(n), base], base, np.argmax(leaders, axis=1))


@dataclass(frozen=True)
class VoteBatch:
    """Array form of a batch of vote records."""

    spec_index: np.ndarray  # [N, n2]
    base_probs: np.ndarray  # [N, K]
    variant_probs: np.ndarray  # [N, n2, K]
    final: np.ndarray  # [N]
    transform_set: Tuple[TransformSpec, ...]

    def __len__(self):
        return self.base_probs.shape[0]

    @property
    def base_predictions(self) -> np.ndarray:
        return np.argmax(self.base_probs, axis=1)

    @property
    def variant_predictions(self) -> np.ndarray:
        return np.argmax(self.variant_probs, axis=2)

    def record(self, i: int) -> VoteRecord:
        variant_pred = np.argmax(self.variant_probs[i], axis=1)
        votes = tuple(
            VariantVote(self.transform_set[j], int(c), p)
            for j, c, p in zip(self.spec_index[i], variant_pred, self.variant_probs[i])
        )
        return VoteRecord(int(np.argmax(self.base_probs[i])), self.base_probs[i], votes, int(self.final[i]))

    def records(self) -> List[VoteRecord]:
        return [self.record(i) for i in range(len(self))]


def _spec_block(spec: TransformSpec, block: np.ndarray, noise: Optional[np.ndarray]) -> np.ndarray:
    """Transform a freshly gathered (owned) block of normalized windows in place where possible."""
    length = block.shape[-1]
    if isinstance(spec, Jitter):
        if noise is not None:
            block += noise
        return block
    if isinstance(spec, SegmentOut):
        start, n = segment_bounds(spec.start_frac, spec.ratio, length)
        block[:, list(spec.channels), start : start + n] = 0.0
        return block
    if isinstance(spec, SensorOut):
        block[:, list(spec.channels), :] = 0.0
        return block
    if isinstance(spec, Clip):
        return clip_array(block, *segment_bounds(spec.start_frac, spec.ratio, length))
    if isinstance(spec, KeepOnly):
        return keep_only_array(block, *segment_bounds(spec.start_frac, spec.ratio, length))
    raise ForeignTransform(f"unsupported spec {spec!r}")


class _AffineHead:
    """First affine layer of a reference model and the rest of the network as a function."""

    def __init__(self, model):
        self.weight = model.weights[0]
        self.bias = model.weights[1]
        self.rest = model.weights[2:]

    def pre(self, zf: np.ndarray) -> np.ndarray:
        return zf @ self.weight.T + self.bias

    def probs(self, pre: np.ndarray) -> np.ndarray:
        if not self.rest:
            return softmax(pre)
        w2, b2 = self.rest
        return softmax(np.maximum(pre, 0.0) @ w2.T + b2)


def _changed_columns(spec: TransformSpec, n_channels: int, length: int) -> Optional[np.ndarray]:
    """Flat input indices a masking or clipping spec may change; None for jitter."""
    if isinstance(spec, Jitter):
        return None
    if isinstance(spec, SensorOut):
        chans, start, n = spec.channels, 0, length
    elif isinstance(spec, SegmentOut):
        chans = spec.channels
        start, n = segment_bounds(spec.start_frac, spec.ratio, length)
    elif isinstance(spec, (Clip, KeepOnly)):
        chans = range(n_channels)
        start, n = segment_bounds(spec.start_frac, spec.ratio, length)
        if isinstance(spec, KeepOnly):
            keep = np.zeros((n_channels, length), dtype=bool)
            keep[:, start : start + n] = True
            return np.flatnonzero(~keep.ravel())
    else:
        raise ForeignTransform(f"unsupported spec {spec!r}")
    return (np.asarray(chans)[:, None] * length + np.arange(start, start + n)[None, :]).ravel()


def _variant_pre(head: _AffineHead, spec: TransformSpec, z_rows: np.ndarray, pre_rows: np.ndarray,
                 noise: Optional[np.ndarray]) -> np.ndarray:
    n_channels, length = z_rows.shape[1:]
    cols = _changed_columns(spec, n_channels, length)
    if cols is None:
        return pre_rows if noise is None else pre_rows + head.weight @ noise.ravel()
    if cols.size == 0:
        return pre_rows
    flat = z_rows.reshape(len(z_rows), -1)
    old = flat[:, cols]
    if isinstance(spec, Clip):
        clipped = clip_array(z_rows, *segment_bounds(spec.start_frac, spec.ratio, length))
        change = clipped.reshape(len(z_rows), -1)[:, cols] - old
    else:
        change = -old  # every other kind zeroes the changed inputs
    return pre_rows + change @ head.weight[:, cols].T


def _as_block(windows) -> np.ndarray:
    if isinstance(windows, Window):
        return windows.values[None]
    if isinstance(windows, np.ndarray):
        return windows
    return np.stack([w.values for w in windows])


def _spec_indices(artifact: ModelArtifact, specs: Sequence[TransformSpec]) -> np.ndarray:
    index = {}
    for j, s in enumerate(artifact.transform_set):
        index.setdefault(s, j)
    out = []
    for s in specs:
        if s not in index:
            raise ForeignTransform(f"{s!r} is not in the artifact's transform set")
        out.append(index[s])
    return np.array(out, dtype=np.int64)


def check_n2(artifact: ModelArtifact, n2: int) -> None:
    if n2 < 0:
        raise TooManyVariants(n2, artifact.max_variants, what="n2")
    if n2 > artifact.max_variants:
        raise TooManyVariants(n2, artifact.max_variants, what="n2")


def tta_vote_arrays(artifact: ModelArtifact, windows, n2: int, seed: int = 0, start_index: int = 0,
                    specs: Optional[Sequence[Sequence[TransformSpec]]] = None,
                    chunk_rows: int = 1024) -> VoteBatch:
    """Vote on a batch of raw windows; window ``i`` uses per-window index ``start_index + i``.

    ``specs`` (one list per window) overrides the random draw; every entry
    must belong to the artifact's transform set.
    """
    x = _as_block(windows)
    if x.ndim != 3 or x.shape[1:] != artifact.input_shape:
        raise ShapeMismatch(f"expected windows of shape {artifact.input_shape}, got {x.shape[1:]}")
    n = x.shape[0]
    if specs is not None:
        if len(specs) != n:
            raise ShapeMismatch("need one spec list per window")
        sel = np.stack([_spec_indices(artifact, s) for s in specs]) if n else np.zeros((0, 0), int)
        n2 = sel.shape[1] if n else 0
        check_n2(artifact, n2)
    else:
        check_n2(artifact, n2)
        sel = select_variants(seed, np.arange(start_index, start_index + n), len(artifact.transform_set), n2)

    z = artifact.normalize(x)
    head = _AffineHead(artifact.model) if isinstance(artifact, ModelArtifact) else None
    if head is not None:
        pre = np.concatenate([head.pre(z[i : i + chunk_rows].reshape(-1, head.weight.shape[1]))
                              for i in range(0, n, chunk_rows)]) if n else np.zeros((0, head.weight.shape[0]))
        base_probs = head.probs(pre)
    else:
        base_probs = artifact.predict_proba_normalized(z, chunk_rows)
    k = base_probs.shape[1]
    variant_probs = np.empty((n, n2, k))
    if n2:
        flat = sel.ravel()
        order = np.argsort(flat, kind="stable")
        present, starts = np.unique(flat[order], return_index=True)
        bounds = list(starts) + [flat.size]
        sigma2 = artifact.sigma2()
        c, t = artifact.input_shape
        for j, a, b in zip(present, bounds[:-1], bounds[1:]):
            spec = artifact.transform_set[j]
            pos = order[a:b]
            rows, slots = np.divmod(pos, n2)
            noise = None
            if isinstance(spec, Jitter) and spec.alpha > 0:
                noise = jitter_noise((c, t), spec.alpha, sigma2, spec_rng(seed, int(j)), spec.band,
                                     artifact.sampling_rate_hz)
            if head is not None:
                for r in range(0, len(rows), chunk_rows):
                    rr = rows[r : r + chunk_rows]
                    variant_probs[rr, slots[r : r + chunk_rows]] = head.probs(
                        _variant_pre(head, spec, z[rr], pre[rr], noise))
            else:
                block = _spec_block(spec, z[rows], noise)
                variant_probs[rows, slots] = artifact.predict_proba_normalized(block, chunk_rows)
    base_pred = np.argmax(base_probs, axis=1)
    final = aggregate_votes(base_pred, np.argmax(variant_probs, axis=2), k) if n2 else base_pred
    return VoteBatch(sel, base_probs, variant_probs, final, artifact.transform_set)


def tta_predict_batch(artifact: ModelArtifact, windows, n2: int, seed: int = 0,
                      start_index: int = 0) -> List[VoteRecord]:
    return tta_vote_arrays(artifact, windows, n2, seed, start_index).records()


def tta_predict(artifact: ModelArtifact, w: Union[Window, np.ndarray], n2: int, seed: int = 0,
                window_index: int = 0, specs: Optional[Sequence[TransformSpec]] = None) -> VoteRecord:
    x = w.values[None] if isinstance(w, Window) else np.asarray(w, dtype=np.float64)[None]
    batch = tta_vote_arrays(artifact, x, n2, seed, window_index,
                            specs=None if specs is None else [list(specs)])
    return batch.record(0)
