"""Leave-one-subject-out evaluation over the ablation scenarios.

Scenarios:

========  ============  ================  ===========
name      augmentation  learning rate     test votes
========  ============  ================  ===========
Base      no            constant          no
DAug      yes           constant          no
CAWR      no            warm restarts     no
Opti      yes           warm restarts     yes
========  ============  ================  ===========
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .data import Fold, loso_folds
from .errors import BadConfig, TooFewSubjects
from .metrics import ResultRow, confusion_matrix, macro_f1
from .predict import tta_vote_arrays
from .training import CompetitiveConfig, train_competitive
from .types import Dataset

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class Scenario:
    name: str
    augment: bool
    schedule: str
    tta: bool


SCENARIOS: Dict[str, Scenario] = {
    "Base": Scenario("Base", augment=False, schedule="constant", tta=False),
    "DAug": Scenario("DAug", augment=True, schedule="constant", tta=False),
    "CAWR": Scenario("CAWR", augment=False, schedule="cawr", tta=False),
    "Opti": Scenario("Opti", augment=True, schedule="cawr", tta=True),
}


def scenario_config(base: CompetitiveConfig, scenario: Scenario, seed: int) -> CompetitiveConfig:
    train = replace(base.train, schedule=scenario.schedule, seed=seed)
    return replace(base, augment=scenario.augment, train=train)


def run_fold(fold: Fold, scenario: Scenario, seed: int, base: CompetitiveConfig,
             paper_literal: bool = False) -> float:
    """Train on the fold's training part and return macro-F1 on its held-out subject."""
    cfg = scenario_config(base, scenario, seed)
    artifact, _ = train_competitive(fold.train, fold.val, cfg)
    n2 = cfg.n2 if scenario.tta else 0
    votes = tta_vote_arrays(artifact, fold.test.values, n2, seed=seed)
    m = confusion_matrix(votes.final, fold.test.labels, fold.test.n_classes)
    return macro_f1(m, paper_literal)


def _job(args):
    fold, scenario, seed, base, paper_literal, dataset_name = args
    score = run_fold(fold, scenario, seed, base, paper_literal)
    return ResultRow(dataset_name, base.model_kind, scenario.name, fold.subject, seed, score)


def evaluate_loso(dataset: Dataset, scenarios: Sequence[str] = tuple(SCENARIOS),
                  seeds: Iterable[int] = DEFAULT_SEEDS, base: CompetitiveConfig = CompetitiveConfig(),
                  dataset_name: str = "dataset", workers: int = 1, paper_literal: bool = False,
                  split_seed: int = 0) -> List[ResultRow]:
    """One result row per scenario, fold and seed, in that nesting order."""
    unknown = [s for s in scenarios if s not in SCENARIOS]
    if unknown:
        raise BadConfig(f"unknown scenario(s) {unknown}; choose from {list(SCENARIOS)}")
    if len(dataset.subjects) < 2:
        raise TooFewSubjects(f"LOSO needs at least 2 subjects, got {len(dataset.subjects)}")
    if workers < 1:
        raise BadConfig("workers must be >= 1")
    folds = loso_folds(dataset, base.val_frac, split_seed)
    jobs = [(fold, SCENARIOS[name], int(seed), base, paper_literal, dataset_name)
            for name in scenarios for fold in folds for seed in seeds]
    if workers == 1:
        rows = []
        for job in jobs:
            rows.append(_job(job))
            log.info("%s fold=%s seed=%d macro_f1=%.4f", rows[-1].scenario, rows[-1].fold,
                     rows[-1].seed, rows[-1].macro_f1)
        return rows
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def seed_means(rows: Sequence[ResultRow], scenario: str) -> Dict[int, float]:
    """Fold-mean macro-F1 per seed for one scenario."""
    per_seed: Dict[int, List[float]] = {}
    for r in rows:
        if r.scenario == scenario:
            per_seed.setdefault(r.seed, []).append(r.macro_f1)
    return {s: float(np.mean(v)) for s, v in sorted(per_seed.items())}
