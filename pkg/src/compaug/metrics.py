"""Confusion matrices, macro-F1 and result tables."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, List, Sequence

import numpy as np

from .errors import BadLabel, LengthMismatch


def confusion_matrix(pred: Sequence[int], truth: Sequence[int], n_classes: int) -> np.ndarray:
    """``M[i, j]`` counts samples with true class ``i`` predicted as ``j``."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise LengthMismatch(f"pred has {pred.size} entries, truth has {truth.size}")
    for name, arr in (("pred", pred), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise BadLabel(f"{name} contains a class outside [0, {n_classes})")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (truth, pred), 1)
    return m


def _class_f1(m: np.ndarray, paper_literal: bool) -> List[Fraction]:
    scale = 1 if paper_literal else 2
    scores = []
    for c in range(m.shape[0]):
        tp = int(m[c, c])
        fp = int(m[:, c].sum()) - tp
        fn = int(m[c, :].sum()) - tp
        if tp == fp == fn == 0:
            warnings.warn(f"class {c} has no support and no predictions; F1 set to 0", RuntimeWarning,
                          stacklevel=4)
        # 2PR/(P+R) simplifies to 2tp/(2tp+fp+fn); the zero-precision/recall cases give tp = 0
        scores.append(Fraction(scale * tp, 2 * tp + fp + fn) if tp else Fraction(0))
    return scores


def per_class_f1(m: np.ndarray, paper_literal: bool = False) -> List[float]:
    """F1 per class from a confusion matrix.

    The default is the harmonic mean ``2*P*R / (P+R)``. ``paper_literal=True``
    drops the factor 2, i.e. ``P*R / (P+R)``, which halves every score.
    A class with no support and no predictions scores 0 and triggers a warning.
    Scores are computed in exact rational arithmetic and rounded once.
    """
    return [float(f) for f in _class_f1(np.asarray(m), paper_literal)]


def macro_f1(m: np.ndarray, paper_literal: bool = False) -> float:
    scores = _class_f1(np.asarray(m), paper_literal)
    return float(sum(scores, Fraction(0)) / len(scores))


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    model_kind: str
    scenario: str
    fold: str
    seed: int
    macro_f1: float


RESULT_COLUMNS = ("dataset", "model_kind", "scenario", "fold", "seed", "macro_f1")


def format_results(rows: Iterable[ResultRow]) -> str:
    lines = ["\t".join(RESULT_COLUMNS)]
    for r in rows:
        lines.append(f"{r.dataset}\t{r.model_kind}\t{r.scenario}\t{r.fold}\t{r.seed}\t{r.macro_f1:.6f}")
    return "\n".join(lines) + "\n"


def parse_results(text: str) -> List[ResultRow]:
    rows = []
    for line in text.strip().splitlines()[1:]:
        d, k, s, f, seed, score = line.split("\t")
        rows.append(ResultRow(d, k, s, f, int(seed), float(score)))
    return rows


def summarize(rows: Sequence[ResultRow]) -> dict:
    """Mean and standard deviation across seeds of the per-seed fold-mean macro-F1, per scenario."""
    out = {}
    for scenario in dict.fromkeys(r.scenario for r in rows):
        per_seed = {}
        for r in rows:
            if r.scenario == scenario:
                per_seed.setdefault(r.seed, []).append(r.macro_f1)
        seed_means = {s: float(np.mean(v)) for s, v in sorted(per_seed.items())}
        vals = np.array(list(seed_means.values()))
        out[scenario] = {"mean": float(vals.mean()), "std": float(vals.std()), "per_seed": seed_means}
    return out
