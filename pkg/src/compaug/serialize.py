"""JSON documents for specs, artifacts, vote records and explanations.

Every top-level document carries ``schema_version`` and ``type``. Floats are
written with Python's shortest round-trip repr, so ``dumps(loads(s)) == s`` for
any document this module wrote. The pretty form keeps numeric lists on a
single line (one line per matrix row) so artifacts diff sensibly; the compact
form is used for line-delimited streams.

Decoding failures raise :class:`MalformedInput` with a JSON-path location such
as ``$.model.weights[2]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .errors import CompAugError, MalformedInput
from .explain import ExplainConfig
from .model import ReferenceModel, TrainConfig
from .training import CompetitiveConfig, ModelArtifact
from .transforms import TransformSetConfig
from .types import (
    SPEC_KINDS,
    Clip,
    Explanation,
    Jitter,
    KeepOnly,
    NormStats,
    SegmentOut,
    SensorOut,
    VariantVote,
    VoteRecord,
    Window,
)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Prediction:
    """One line of a prediction stream: a vote record tied to its input window."""

    index: int
    subject_id: str
    label: Optional[int]
    record: VoteRecord


# --------------------------------------------------------------------------
# emitting
# --------------------------------------------------------------------------


def _is_scalar(v) -> bool:
    return v is None or isinstance(v, (bool, int, float, str))


def _emit(v, depth: int) -> str:
    pad = " " * depth
    inner = " " * (depth + 1)
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_emit(val, depth + 1)}" for k, val in v.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(v, list):
        if all(_is_scalar(x) for x in v):
            return json.dumps(v, allow_nan=False)
        return "[\n" + ",\n".join(inner + _emit(x, depth + 1) for x in v) + "\n" + pad + "]"
    return json.dumps(v, allow_nan=False)


def dumps(obj, compact: bool = False) -> str:
    doc = {"schema_version": SCHEMA_VERSION, **to_doc(obj)}
    if compact:
        return json.dumps(doc, separators=(",", ":"), allow_nan=False)
    return _emit(doc, 0) + "\n"


def loads(text: str, expected: Optional[str] = None):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"invalid JSON: {exc.msg}", f"line {exc.lineno} column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise MalformedInput("top-level document must be an object", "$")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise MalformedInput(f"unsupported schema_version {version!r}", "$.schema_version")
    body = {k: v for k, v in doc.items() if k != "schema_version"}
    if expected is not None and body.get("type") != expected:
        raise MalformedInput(f"expected a {expected} document, got {body.get('type')!r}", "$.type")
    return from_doc(body, "$")


def dump_file(obj, path, compact: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj, compact))


def load_file(path, expected: Optional[str] = None):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), expected)


def dumps_lines(objs) -> str:
    return "".join(dumps(o, compact=True) + "\n" for o in objs)


def loads_lines(text: str, expected: Optional[str] = None) -> list:
    out = []
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            try:
                out.append(loads(line, expected))
            except MalformedInput as exc:
                raise MalformedInput(str(exc), f"line {i}") from None
    return out


# --------------------------------------------------------------------------
# encoding
# --------------------------------------------------------------------------


def _arr(a) -> list:
    return np.asarray(a).tolist()


def _config_doc(cfg) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v

    return {k: plain(v) for k, v in asdict(cfg).items()}


def spec_doc(spec) -> dict:
    if isinstance(spec, Jitter):
        return {"kind": spec.kind, "alpha": spec.alpha, "band": None if spec.band is None else list(spec.band)}
    if isinstance(spec, (Clip, KeepOnly)):
        return {"kind": spec.kind, "start_frac": spec.start_frac, "ratio": spec.ratio}
    if isinstance(spec, SegmentOut):
        return {"kind": spec.kind, "channels": list(spec.channels), "start_frac": spec.start_frac,
                "ratio": spec.ratio}
    if isinstance(spec, SensorOut):
        return {"kind": spec.kind, "channels": list(spec.channels)}
    raise TypeError(f"not a transform spec: {spec!r}")


def _vote_record_body(r: VoteRecord) -> dict:
    return {
        "base_prediction": r.base_prediction,
        "base_probs": _arr(r.base_probs),
        "variant_votes": [{"spec": spec_doc(v.spec), "prediction": v.prediction, "probs": _arr(v.probs)}
                          for v in r.variant_votes],
        "final_prediction": r.final_prediction,
    }


def to_doc(obj) -> dict:
    """Typed document body (without ``schema_version``)."""
    if type(obj) in SPEC_KINDS.values():
        return {"type": "TransformSpec", **spec_doc(obj)}
    if isinstance(obj, Window):
        return {"type": "Window", "channel_names": list(obj.channel_names),
                "sampling_rate_hz": obj.sampling_rate_hz, "values": _arr(obj.values)}
    if isinstance(obj, VoteRecord):
        return {"type": "VoteRecord", **_vote_record_body(obj)}
    if isinstance(obj, Prediction):
        return {"type": "Prediction", "index": obj.index, "subject_id": obj.subject_id, "label": obj.label,
                **_vote_record_body(obj.record)}
    if isinstance(obj, Explanation):
        return {
            "type": "Explanation",
            "predicted_class": obj.predicted_class,
            "n_variants_used": obj.n_variants_used,
            "necessity": _arr(obj.necessity),
            "non_essential_mask": _arr(obj.non_essential_mask),
            "sufficient_segments": [list(s) for s in obj.sufficient_segments],
            "band_sensitivity": [list(b) for b in obj.band_sensitivity],
            "channel_flips": list(obj.channel_flips),
        }
    if isinstance(obj, ModelArtifact):
        return {
            "type": "ModelArtifact",
            "class_names": list(obj.class_names),
            "channel_names": list(obj.channel_names),
            "sampling_rate_hz": obj.sampling_rate_hz,
            "hyper": _config_doc(obj.hyper),
            "norm_stats": {"mean": _arr(obj.norm_stats.mean), "var": _arr(obj.norm_stats.var)},
            "transform_set": [spec_doc(s) for s in obj.transform_set],
            "model": {"kind": obj.model.kind, "input_shape": list(obj.model.input_shape),
                      "weights": [_arr(w) for w in obj.model.weights]},
        }
    if isinstance(obj, ExplainConfig):
        return {"type": "ExplainConfig", **_config_doc(obj)}
    if isinstance(obj, CompetitiveConfig):
        return {"type": "CompetitiveConfig", **_config_doc(obj)}
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# --------------------------------------------------------------------------
# decoding
# --------------------------------------------------------------------------


def _get(doc: dict, key: str, loc: str):
    if not isinstance(doc, dict):
        raise MalformedInput("expected an object", loc)
    if key not in doc:
        raise MalformedInput(f"missing field {key!r}", loc)
    return doc[key]


def _only(doc: dict, allowed, loc: str) -> None:
    extra = set(doc) - set(allowed)
    if extra:
        raise MalformedInput(f"unknown field(s) {sorted(extra)}", loc)


def _int(v, loc: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise MalformedInput(f"expected an integer, got {v!r}", loc)
    return v


def _num(v, loc: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise MalformedInput(f"expected a finite number, got {v!r}", loc)
    return float(v)


def _str(v, loc: str) -> str:
    if not isinstance(v, str):
        raise MalformedInput(f"expected a string, got {v!r}", loc)
    return v


def _list(v, loc: str) -> list:
    if not isinstance(v, list):
        raise MalformedInput(f"expected a list, got {type(v).__name__}", loc)
    return v


def _array(v, loc: str, ndim: int, dtype=np.float64) -> np.ndarray:
    _list(v, loc)

    def walk(x, depth, where):
        if depth == ndim:
            if dtype is bool:
                if not isinstance(x, bool):
                    raise MalformedInput(f"expected a boolean, got {x!r}", where)
            else:
                _num(x, where)
            return
        _list(x, where)
        for i, item in enumerate(x):
            walk(item, depth + 1, f"{where}[{i}]")

    walk(v, 0, loc)
    try:
        arr = np.array(v, dtype=dtype)
    except ValueError:
        raise MalformedInput("ragged array", loc) from None
    if arr.ndim != ndim:
        raise MalformedInput(f"expected a {ndim}-D array", loc)
    return arr


def _build(factory, loc: str, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except MalformedInput:
        raise
    except (CompAugError, TypeError, ValueError) as exc:
        raise MalformedInput(str(exc), loc) from None


def spec_from_doc(doc, loc: str = "$"):
    kind = _str(_get(doc, "kind", loc), f"{loc}.kind")
    cls = SPEC_KINDS.get(kind)
    if cls is None:
        raise MalformedInput(f"unknown transform kind {kind!r}", f"{loc}.kind")
    base = {"kind", "type"}
    if cls is Jitter:
        _only(doc, base | {"alpha", "band"}, loc)
        band = _get(doc, "band", loc)
        if band is not None:
            band = [_num(f, f"{loc}.band[{i}]") for i, f in enumerate(_list(band, f"{loc}.band"))]
            if len(band) != 2:
                raise MalformedInput("band must be [f_lo, f_hi]", f"{loc}.band")
        return _build(Jitter, loc, _num(_get(doc, "alpha", loc), f"{loc}.alpha"), band)
    if cls in (Clip, KeepOnly):
        _only(doc, base | {"start_frac", "ratio"}, loc)
        return _build(cls, loc, _num(_get(doc, "start_frac", loc), f"{loc}.start_frac"),
                      _num(_get(doc, "ratio", loc), f"{loc}.ratio"))
    channels = [_int(c, f"{loc}.channels[{i}]")
                for i, c in enumerate(_list(_get(doc, "channels", loc), f"{loc}.channels"))]
    if cls is SensorOut:
        _only(doc, base | {"channels"}, loc)
        return _build(SensorOut, loc, channels)
    _only(doc, base | {"channels", "start_frac", "ratio"}, loc)
    return _build(SegmentOut, loc, channels, _num(_get(doc, "start_frac", loc), f"{loc}.start_frac"),
                  _num(_get(doc, "ratio", loc), f"{loc}.ratio"))


def _vote_record(doc, loc: str) -> VoteRecord:
    votes = []
    for i, v in enumerate(_list(_get(doc, "variant_votes", loc), f"{loc}.variant_votes")):
        vl = f"{loc}.variant_votes[{i}]"
        _only(v, {"spec", "prediction", "probs"}, vl)
        votes.append(_build(VariantVote, vl, spec_from_doc(_get(v, "spec", vl), f"{vl}.spec"),
                            _int(_get(v, "prediction", vl), f"{vl}.prediction"),
                            _array(_get(v, "probs", vl), f"{vl}.probs", 1)))
    return _build(VoteRecord, loc,
                  _int(_get(doc, "base_prediction", loc), f"{loc}.base_prediction"),
                  _array(_get(doc, "base_probs", loc), f"{loc}.base_probs", 1),
                  votes,
                  _int(_get(doc, "final_prediction", loc), f"{loc}.final_prediction"))


_RECORD_KEYS = {"type", "base_prediction", "base_probs", "variant_votes", "final_prediction"}


def _config_from_doc(cls, doc, loc: str, nested=None):
    nested = nested or {}
    names = {f.name for f in fields(cls)}
    _only(doc, names | {"type"}, loc)
    kwargs = {}
    for name in names:
        if name not in doc:
            continue
        value = doc[name]
        if name in nested:
            value = _config_from_doc(nested[name], value, f"{loc}.{name}")
        elif isinstance(value, list):
            value = tuple(tuple(x) if isinstance(x, list) else x for x in value)
        kwargs[name] = value
    return _build(cls, loc, **kwargs)


def _strings(v, loc: str):
    return tuple(_str(s, f"{loc}[{i}]") for i, s in enumerate(_list(v, loc)))


def from_doc(doc, loc: str = "$"):
    kind = _get(doc, "type", loc)
    if kind == "TransformSpec":
        return spec_from_doc(doc, loc)
    if kind == "Window":
        _only(doc, {"type", "channel_names", "sampling_rate_hz", "values"}, loc)
        return _build(Window, loc, _array(_get(doc, "values", loc), f"{loc}.values", 2),
                      _strings(_get(doc, "channel_names", loc), f"{loc}.channel_names"),
                      _num(_get(doc, "sampling_rate_hz", loc), f"{loc}.sampling_rate_hz"))
    if kind == "VoteRecord":
        _only(doc, _RECORD_KEYS, loc)
        return _vote_record(doc, loc)
    if kind == "Prediction":
        _only(doc, _RECORD_KEYS | {"index", "subject_id", "label"}, loc)
        label = _get(doc, "label", loc)
        return Prediction(_int(_get(doc, "index", loc), f"{loc}.index"),
                          _str(_get(doc, "subject_id", loc), f"{loc}.subject_id"),
                          None if label is None else _int(label, f"{loc}.label"),
                          _vote_record(doc, loc))
    if kind == "Explanation":
        keys = {"type", "predicted_class", "n_variants_used", "necessity", "non_essential_mask",
                "sufficient_segments", "band_sensitivity", "channel_flips"}
        _only(doc, keys, loc)
        segs = [[_int(x, f"{loc}.sufficient_segments[{i}][{j}]") for j, x in enumerate(_list(s, f"{loc}.sufficient_segments[{i}]"))]
                for i, s in enumerate(_list(_get(doc, "sufficient_segments", loc), f"{loc}.sufficient_segments"))]
        bands = _array(_get(doc, "band_sensitivity", loc), f"{loc}.band_sensitivity", 2) \
            if _get(doc, "band_sensitivity", loc) else np.zeros((0, 3))
        flips = _get(doc, "channel_flips", loc)
        for i, f in enumerate(_list(flips, f"{loc}.channel_flips")):
            if not isinstance(f, bool):
                raise MalformedInput("expected a boolean", f"{loc}.channel_flips[{i}]")
        if any(len(s) != 2 for s in segs) or (bands.size and bands.shape[1] != 3):
            raise MalformedInput("segments are [start, end] pairs and bands [f_lo, f_hi, rate] triples", loc)
        return _build(Explanation, loc,
                      necessity=_array(_get(doc, "necessity", loc), f"{loc}.necessity", 1),
                      non_essential_mask=_array(_get(doc, "non_essential_mask", loc), f"{loc}.non_essential_mask",
                                                1, dtype=bool),
                      sufficient_segments=[tuple(s) for s in segs],
                      band_sensitivity=[tuple(b) for b in bands.tolist()],
                      predicted_class=_int(_get(doc, "predicted_class", loc), f"{loc}.predicted_class"),
                      n_variants_used=_int(_get(doc, "n_variants_used", loc), f"{loc}.n_variants_used"),
                      channel_flips=tuple(flips))
    if kind == "ModelArtifact":
        keys = {"type", "class_names", "channel_names", "sampling_rate_hz", "hyper", "norm_stats",
                "transform_set", "model"}
        _only(doc, keys, loc)
        m = _get(doc, "model", loc)
        ml = f"{loc}.model"
        _only(m, {"kind", "input_shape", "weights"}, ml)
        weights = []
        for i, w in enumerate(_list(_get(m, "weights", ml), f"{ml}.weights")):
            wl = f"{ml}.weights[{i}]"
            weights.append(_array(w, wl, 2 if isinstance(w, list) and w and isinstance(w[0], list) else 1))
        shape = [_int(s, f"{ml}.input_shape[{i}]") for i, s in enumerate(_list(_get(m, "input_shape", ml),
                                                                                 f"{ml}.input_shape"))]
        model = _build(ReferenceModel, ml, _str(_get(m, "kind", ml), f"{ml}.kind"), weights, shape)
        ns = _get(doc, "norm_stats", loc)
        nl = f"{loc}.norm_stats"
        _only(ns, {"mean", "var"}, nl)
        stats = _build(NormStats, nl, _array(_get(ns, "mean", nl), f"{nl}.mean", 1),
                       _array(_get(ns, "var", nl), f"{nl}.var", 1))
        specs = [spec_from_doc(s, f"{loc}.transform_set[{i}]")
                 for i, s in enumerate(_list(_get(doc, "transform_set", loc), f"{loc}.transform_set"))]
        hyper = _config_from_doc(CompetitiveConfig, _get(doc, "hyper", loc), f"{loc}.hyper",
                                 {"train": TrainConfig, "transforms": TransformSetConfig})
        return _build(ModelArtifact, loc, model, stats, specs, hyper,
                      _strings(_get(doc, "class_names", loc), f"{loc}.class_names"),
                      _strings(_get(doc, "channel_names", loc), f"{loc}.channel_names"),
                      _num(_get(doc, "sampling_rate_hz", loc), f"{loc}.sampling_rate_hz"))
    if kind == "ExplainConfig":
        return _config_from_doc(ExplainConfig, doc, loc)
    if kind == "CompetitiveConfig":
        return _config_from_doc(CompetitiveConfig, doc, loc, {"train": TrainConfig, "transforms": TransformSetConfig})
    raise MalformedInput(f"unknown document type {kind!r}", f"{loc}.type")
