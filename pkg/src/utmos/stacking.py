"""Stacked ensembling of strong and weak learners.

Stage 0 extracts features, stage 1 produces out-of-fold (OOF) predictions
from every base learner, stage 2 fits several meta regressors on the stage-1
score matrix, and stage 3 fits one final regressor on the stage-2 scores.
Stage-2 scores used to train stage 3 are themselves out-of-fold, on the same
folds as stage 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import clone
from sklearn.model_selection import KFold

from .dataset import DEFAULT_SCALE
from .errors import ConfigurationError, DatasetError
from .metrics import srcc, system_aggregate
from .weak import METHODS, WeakLearnerSpec, make_regressor, predict_weak, train_weak


# -- stage-1 learner adapters ------------------------------------------------

class WeakStackLearner:
    """Weak learner over a fixed table of utterance embeddings."""

    def __init__(self, spec: WeakLearnerSpec, embeddings: Mapping[str, np.ndarray],
                 domain_of: Mapping[str, str] | None = None, seed: int = 0):
        self.spec = spec
        self.name = spec.name
        self.embeddings = embeddings
        self.domain_of = domain_of
        self.seed = seed

    def fit(self, ids: Sequence[str], targets: Mapping[str, float]):
        if self.spec.domain_tag != "*" and self.domain_of is not None:
            ids = [u for u in ids if self.domain_of[u] == self.spec.domain_tag]
        return train_weak(self.spec, self.embeddings, {u: targets[u] for u in ids}, self.seed)

    def predict(self, fitted, ids: Sequence[str]) -> np.ndarray:
        return np.array([p.score for p in predict_weak(fitted, self.embeddings, ids)])


class StrongStackLearner:
    """Retrains a strong learner on each fold's training utterances.

    Needs the merged dataset with its dev split (used for checkpoint
    selection); ``targets`` passed to :meth:`fit` are ignored because the
    strong learner trains on individual ratings.
    """

    def __init__(self, name: str, ds, cfg, aug=None, refs=None, phonemes=None, waves=None, seed: int = 0):
        from .dataset import load_waveforms

        self.name = name
        self.ds, self.cfg, self.aug, self.refs, self.phonemes, self.seed = ds, cfg, aug, refs, phonemes, seed
        self.waves = waves if waves is not None else load_waveforms(ds)
        self._ref_table = None
        if refs is not None:
            self._ref_table = refs if isinstance(refs, Mapping) else {r.utterance_id: r.reference for r in refs}

    def fit(self, ids: Sequence[str], targets=None):
        from .strong import train_strong

        ckpt = train_strong(self.ds, self.cfg, self.aug, self.refs, phonemes=self.phonemes,
                            waves=self.waves, seed=self.seed, train_ids=list(ids))
        return ckpt.to_scorer()

    def predict(self, scorer, ids: Sequence[str]) -> np.ndarray:
        frames = [scorer.backend.extract(self.waves[u], u).frames for u in ids]
        domains = [self.ds.utterance(u).domain_id for u in ids]
        ph = rf = None
        if scorer.model.phoneme_encoder is not None:
            ph = [tuple(self.phonemes(u)) for u in ids]
            rf = [tuple(self._ref_table[u]) for u in ids]
        return scorer.predict_features(frames, domains, ph, rf)


class FixedPredictionLearner:
    """Returns precomputed predictions regardless of training data.

    Used for already-trained models whose predictions are reused as-is (the
    single-model shortcut for expensive strong learners) and in tests.
    """

    def __init__(self, name: str, predictions: Mapping[str, float]):
        self.name = name
        self.predictions = predictions

    def fit(self, ids, targets=None):
        return None

    def predict(self, fitted, ids) -> np.ndarray:
        return np.array([self.predictions[u] for u in ids], dtype=np.float64)


class EstimatorLearner:
    """Any scikit-learn regressor over a feature table."""

    def __init__(self, name: str, estimator, features: Mapping[str, np.ndarray]):
        self.name = name
        self.estimator = estimator
        self.features = features

    def fit(self, ids, targets):
        X = np.vstack([self.features[u] for u in ids])
        return clone(self.estimator).fit(X, np.array([targets[u] for u in ids]))

    def predict(self, fitted, ids) -> np.ndarray:
        return fitted.predict(np.vstack([self.features[u] for u in ids]))


# -- stage data --------------------------------------------------------------

@dataclass
class StageScores:
    utterance_ids: list
    columns: list
    matrix: np.ndarray  # [n_utterances, n_learners]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (len(self.utterance_ids), len(self.columns)):
            raise ValueError("stage score matrix does not match ids/columns")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("stage scores contain missing or non-finite entries")

    def column(self, name: str) -> np.ndarray:
        return self.matrix[:, self.columns.index(name)]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["utterance_id"] + list(self.columns))
            for utt, row in zip(self.utterance_ids, self.matrix):
                w.writerow([utt] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "StageScores":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "utterance_id":
                raise DatasetError("stage scores header must start with utterance_id", 1)
            ids, rows = [], []
            for line, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise DatasetError(f"expected {len(header)} fields", line)
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
        return cls(ids, header[1:], np.array(rows).reshape(len(ids), len(header) - 1))


@dataclass
class StackingPlan:
    learners: list
    n_folds: int = 5
    stage2_methods: Sequence[str] = METHODS
    stage3_method: str = "ridge"
    stage2_hyperparams: Mapping[str, Mapping] = field(default_factory=dict)
    stage3_hyperparams: Mapping = field(default_factory=dict)
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_folds < 2:
            raise ConfigurationError("n_folds must be at least 2")
        if not self.learners:
            raise ConfigurationError("stacking plan needs at least one stage-1 learner")
        names = [l.name for l in self.learners]
        if len(set(names)) != len(names):
            raise ConfigurationError("stage-1 learner names must be unique")
        for m in list(self.stage2_methods) + [self.stage3_method]:
            if m not in METHODS:
                raise ConfigurationError(f"unknown regression method {m!r}")


# -- stage 1 -----------------------------------------------------------------

def fold_assignment(n: int, n_folds: int, seed: int) -> np.ndarray:
    """Fold index for each of ``n`` positions; depends only on ``n`` and the seed."""
    if n_folds < 2:
        raise ConfigurationError("n_folds must be at least 2")
    if n_folds > n:
        raise ConfigurationError(f"n_folds={n_folds} exceeds the {n} available utterances")
    folds = np.empty(n, dtype=int)
    for k, (_, held_out) in enumerate(KFold(n_folds, shuffle=True, random_state=seed).split(np.zeros(n))):
        folds[held_out] = k
    return folds


def oof_predictions(learner, ids: Sequence[str], targets: Mapping[str, float], n_folds: int = 5,
                    seed: int = 0, folds: np.ndarray | None = None) -> np.ndarray:
    """Predict each utterance with a model fitted on the folds that exclude it."""
    ids = list(ids)
    folds = fold_assignment(len(ids), n_folds, seed) if folds is None else folds
    out = np.empty(len(ids))
    for k in np.unique(folds):
        train = [u for u, f in zip(ids, folds) if f != k]
        held = np.flatnonzero(folds == k)
        if len(train) < 2:
            raise ConfigurationError("fold too small to fit a learner")
        fitted = learner.fit(train, targets)
        out[held] = learner.predict(fitted, [ids[i] for i in held])
    return out


def _stage1_job(learner, ids, targets, folds):
    oof = oof_predictions(learner, ids, targets, folds=folds)
    return oof, learner.fit(ids, targets)


# -- stages 2 and 3 ----------------------------------------------------------

def train_meta(stage_scores: StageScores, targets, methods: Sequence[str] = METHODS,
               hyperparams: Mapping[str, Mapping] | None = None, seed: int = 0) -> list:
    """One fitted regressor per method on the stage-1 score matrix."""
    y = np.array([targets[u] for u in stage_scores.utterance_ids], dtype=np.float64)
    hyperparams = hyperparams or {}
    return [make_regressor(m, hyperparams.get(m), seed).fit(stage_scores.matrix, y) for m in methods]


def train_final(stage2_scores: StageScores, targets, method: str = "ridge",
                hyperparams: Mapping | None = None, seed: int = 0):
    y = np.array([targets[u] for u in stage2_scores.utterance_ids], dtype=np.float64)
    return make_regressor(method, hyperparams, seed).fit(stage2_scores.matrix, y)


def _meta_oof(stage1: StageScores, y: np.ndarray, method: str, hp, seed: int, folds: np.ndarray) -> np.ndarray:
    out = np.empty(len(y))
    for k in np.unique(folds):
        tr, te = folds != k, folds == k
        out[te] = make_regressor(method, hp, seed).fit(stage1.matrix[tr], y[tr]).predict(stage1.matrix[te])
    return out


@dataclass
class FittedStack:
    plan: StackingPlan
    stage1_models: list
    stage2_models: list
    stage3_model: object
    stage1_scores: StageScores
    stage2_scores: StageScores

    def stage1_predict(self, ids: Sequence[str]) -> StageScores:
        cols = [l.predict(m, list(ids)) for l, m in zip(self.plan.learners, self.stage1_models)]
        return StageScores(list(ids), [l.name for l in self.plan.learners], np.column_stack(cols))


def fit_stack(plan: StackingPlan, ids: Sequence[str], targets: Mapping[str, float]) -> FittedStack:
    ids = list(ids)
    folds = fold_assignment(len(ids), plan.n_folds, plan.seed)
    jobs = Parallel(n_jobs=plan.n_jobs)(
        delayed(_stage1_job)(learner, ids, targets, folds) for learner in plan.learners
    )
    names = [l.name for l in plan.learners]
    stage1 = StageScores(ids, names, np.column_stack([oof for oof, _ in jobs]))
    y = np.array([targets[u] for u in ids], dtype=np.float64)

    methods = list(plan.stage2_methods)
    stage2_models = train_meta(stage1, targets, methods, plan.stage2_hyperparams, plan.seed)
    stage2_oof = np.column_stack([
        _meta_oof(stage1, y, m, plan.stage2_hyperparams.get(m), plan.seed, folds) for m in methods
    ])
    stage2 = StageScores(ids, [f"meta:{m}" for m in methods], stage2_oof)
    stage3 = train_final(stage2, targets, plan.stage3_method, plan.stage3_hyperparams, plan.seed)
    return FittedStack(plan, [m for _, m in jobs], stage2_models, stage3, stage1, stage2)


def stack_predict(fitted: FittedStack, ids: Sequence[str]) -> dict[str, float]:
    """Final raw-scale predictions (clamped to [1, 5]) for ``ids``."""
    ids = list(ids)
    s1 = fitted.stage1_predict(ids)
    s2 = np.column_stack([m.predict(s1.matrix) for m in fitted.stage2_models])
    final = DEFAULT_SCALE.clamp_raw(fitted.stage3_model.predict(s2))
    return dict(zip(ids, map(float, final)))


# -- strong-learner selection ------------------------------------------------

def _system_srcc(pred: np.ndarray, ids, true_by_utt, system_of) -> float:
    ps, ts = system_aggregate(dict(zip(ids, pred)), {u: true_by_utt[u] for u in ids}, system_of)
    systems = list(ts)
    try:
        return srcc([ps[s] for s in systems], [ts[s] for s in systems])
    except ValueError:
        return float("-inf")


def greedy_select_strong(candidates: Sequence[np.ndarray], dev_ids: Sequence[str],
                         dev_true: Mapping[str, float], system_of: Mapping[str, str], k: int) -> list[int]:
    """Indices of ``k`` candidates chosen greedily by dev system-level SRCC.

    ``candidates`` holds each candidate's dev predictions aligned with
    ``dev_ids``. At each step the candidate whose addition maximizes the
    system SRCC of the unweighted mean prediction is added; ties go to the
    earlier candidate.
    """
    if not 1 <= k <= len(candidates):
        raise ConfigurationError(f"k={k} must lie in [1, {len(candidates)}]")
    preds = [np.asarray(c, dtype=np.float64) for c in candidates]
    chosen: list[int] = []
    total = np.zeros(len(dev_ids))
    while len(chosen) < k:
        best, best_score = None, -np.inf
        for i, p in enumerate(preds):
            if i in chosen:
                continue
            score = _system_srcc((total + p) / (len(chosen) + 1), dev_ids, dev_true, system_of)
            if best is None or score > best_score:
                best, best_score = i, score
        chosen.append(best)
        total += preds[best]
    return chosen


def exhaustive_select(candidates, dev_ids, dev_true, system_of, k: int) -> tuple[tuple[int, ...], float]:
    """Best size-``k`` subset by dev system SRCC of the mean prediction (brute force)."""
    preds = [np.asarray(c, dtype=np.float64) for c in candidates]
    best, best_score = None, -np.inf
    for subset in combinations(range(len(preds)), k):
        score = _system_srcc(np.mean([preds[i] for i in subset], axis=0), dev_ids, dev_true, system_of)
        if best is None or score > best_score:
            best, best_score = subset, score
    return best, best_score
