"""Weak learners: classical regressors over mean-pooled frame features."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel, WhiteKernel
from sklearn.linear_model import Ridge
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVR, LinearSVR

from .backends import FrameFeatures
from .errors import ConfigurationError, DatasetError

METHODS = (
    "ridge",
    "linear-svr",
    "random-forest",
    "gradient-boosted-trees",
    "kernel-svr",
    "gaussian-process",
)
ALL_DOMAINS = "*"

DEFAULT_HYPERPARAMS = {
    "ridge": {"alpha": 1.0},
    "linear-svr": {"C": 1.0, "epsilon": 0.0, "max_iter": 20000},
    "random-forest": {"n_estimators": 200, "min_samples_leaf": 1},
    "gradient-boosted-trees": {"n_estimators": 200, "learning_rate": 0.05, "max_depth": 3},
    "kernel-svr": {"C": 1.0, "epsilon": 0.1},
    "gaussian-process": {"noise": None, "length_scale": 1.0},
}


@dataclass(frozen=True)
class UtteranceEmbedding:
    utterance_id: str
    vector: np.ndarray
    backend_id: str


@dataclass(frozen=True)
class LearnerPrediction:
    utterance_id: str
    score: float
    learner: str


@dataclass(frozen=True)
class WeakLearnerSpec:
    backend_id: str
    method: str
    domain_tag: str = ALL_DOMAINS
    hyperparams: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown regression method {self.method!r}; choose from {METHODS}")

    @property
    def name(self) -> str:
        return f"{self.method}|{self.backend_id}|{self.domain_tag}"


def mean_pool(f: FrameFeatures) -> UtteranceEmbedding:
    return UtteranceEmbedding(f.utterance_id, np.asarray(f.frames, dtype=np.float64).mean(axis=0), f.backend_id)


def make_regressor(method: str, hyperparams: Mapping | None = None, seed: int = 0):
    """A fresh, unfitted scikit-learn regressor for one catalog method."""
    if method not in METHODS:
        raise ConfigurationError(f"unknown regression method {method!r}")
    hp = {**DEFAULT_HYPERPARAMS[method], **(hyperparams or {})}
    if method == "ridge":
        return Ridge(**hp)
    if method == "linear-svr":
        return make_pipeline(StandardScaler(), LinearSVR(random_state=seed, dual="auto", **hp))
    if method == "random-forest":
        return RandomForestRegressor(random_state=seed, n_jobs=1, **hp)
    if method == "gradient-boosted-trees":
        return GradientBoostingRegressor(random_state=seed, **hp)
    if method == "kernel-svr":
        return make_pipeline(StandardScaler(), SVR(kernel="rbf", gamma="scale", **hp))
    # gaussian-process: noise=None learns a white-noise level, a number fixes it
    noise = hp.pop("noise")
    kernel = ConstantKernel(1.0) * RBF(length_scale=hp.pop("length_scale"))
    if noise is None:
        kernel = kernel + WhiteKernel(1e-2)
        alpha = 1e-8
    else:
        alpha = max(float(noise), 1e-12)
    return make_pipeline(
        StandardScaler(),
        GaussianProcessRegressor(kernel=kernel, alpha=alpha, normalize_y=True, random_state=seed, **hp),
    )


@dataclass
class FittedWeak:
    spec: WeakLearnerSpec
    estimator: object
    dim: int

    @property
    def name(self) -> str:
        return self.spec.name


def _stack(embeddings, ids) -> np.ndarray:
    rows = [np.asarray(embeddings[u], dtype=np.float64) for u in ids]
    dims = {r.shape for r in rows}
    if len(dims) != 1:
        raise ConfigurationError(f"inconsistent embedding dimensions {sorted(dims)}")
    return np.vstack(rows)


def _as_table(embeddings) -> dict:
    if isinstance(embeddings, Mapping):
        return embeddings
    return {e.utterance_id: e.vector for e in embeddings}


def train_weak(spec: WeakLearnerSpec, embeddings, targets: Mapping[str, float], seed: int = 0) -> FittedWeak:
    """Fit ``spec`` on the utterances listed in ``targets`` (mean-listener raw scores)."""
    table = _as_table(embeddings)
    ids = list(targets)
    if len(ids) < 2:
        raise ConfigurationError("need at least two training utterances")
    X = _stack(table, ids)
    y = np.array([targets[u] for u in ids], dtype=np.float64)
    est = make_regressor(spec.method, spec.hyperparams, seed)
    est.fit(X, y)
    return FittedWeak(spec, est, X.shape[1])


def predict_weak(model: FittedWeak, embeddings, utterance_ids: Sequence[str] | None = None) -> list[LearnerPrediction]:
    table = _as_table(embeddings)
    ids = list(table) if utterance_ids is None else list(utterance_ids)
    X = _stack(table, ids)
    if X.shape[1] != model.dim:
        raise ConfigurationError(f"embedding dim {X.shape[1]} != fitted dim {model.dim}")
    scores = model.estimator.predict(X)
    return [LearnerPrediction(u, float(s), model.name) for u, s in zip(ids, scores)]


def build_learner_bank(backends: Sequence[str], methods: Sequence[str], domains: Sequence[str] = (ALL_DOMAINS,),
                       hyperparams: Mapping[str, Mapping] | None = None) -> list[WeakLearnerSpec]:
    """Every (domain, backend, method) combination."""
    if not backends or not methods or not domains:
        raise ConfigurationError("backends, methods and domains must be non-empty")
    hyperparams = hyperparams or {}
    return [
        WeakLearnerSpec(b, m, d, dict(hyperparams.get(m, {})))
        for d, b, m in product(domains, backends, methods)
    ]


# -- embeddings file -----------------------------------------------------------

def extract_embeddings(waves: Mapping[str, np.ndarray], backends) -> dict[str, dict[str, np.ndarray]]:
    """backend_id -> utterance_id -> mean-pooled vector."""
    out = {}
    for backend in backends:
        out[backend.backend_id] = {
            utt: mean_pool(backend.extract(w, utt)).vector for utt, w in waves.items()
        }
    return out


def write_embeddings(path, tables: Mapping[str, Mapping[str, np.ndarray]]) -> None:
    width = max((len(v) for t in tables.values() for v in t.values()), default=0)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["utterance_id", "backend_id"] + [f"v{i}" for i in range(width)])
        for backend_id, table in tables.items():
            for utt, vec in table.items():
                w.writerow([utt, backend_id] + [repr(float(x)) for x in vec])


def read_embeddings(path) -> dict[str, dict[str, np.ndarray]]:
    out: dict[str, dict[str, np.ndarray]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["utterance_id", "backend_id"]:
            raise DatasetError("embeddings header must start with utterance_id,backend_id", 1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            values = [v for v in row[2:] if v != ""]
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                raise DatasetError("non-numeric embedding value", line) from None
            table = out.setdefault(row[1], {})
            if table and len(next(iter(table.values()))) != len(vec):
                raise DatasetError(f"inconsistent dimension for backend {row[1]!r}", line)
            table[row[0]] = vec
    return out


def domain_ids(ds, split: str, domain_tag: str) -> list[str]:
    ids = ds.ids(split)
    if domain_tag == ALL_DOMAINS:
        return ids
    return [u for u in ids if ds.utterance(u).domain_id == domain_tag]
