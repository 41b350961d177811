"""Run configuration: one YAML file with nested sections.

Relative paths are resolved against the directory holding the config file.
Every random component takes a named sub-seed derived from the top-level
``seed`` (see :func:`sub_seed`), so components can be rerun in isolation.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from .augment import AugmentConfig
from .errors import ConfigurationError
from .strong import StrongConfig, _to_plain
from .weak import ALL_DOMAINS, METHODS


def sub_seed(seed: int, name: str) -> int:
    """Deterministic 32-bit seed for component ``name``."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))]).generate_state(1)[0])


@dataclass(frozen=True)
class DataConfig:
    train_ratings: str | None = None
    dev_ratings: str | None = None
    test_ratings: str | None = None
    audio_dir: str | None = None
    transcripts: str | None = None
    references: str | None = None

    def ratings_by_split(self) -> dict[str, Path]:
        out = {}
        for split in ("train", "dev", "test"):
            value = getattr(self, f"{split}_ratings")
            if value:
                out[split] = Path(value)
        return out


@dataclass(frozen=True)
class TextprocConfig:
    eps: float = 0.3
    min_pts: int = 2


@dataclass(frozen=True)
class WeakConfig:
    backends: tuple = ("toy:dim=64,seed=0",)
    methods: tuple = METHODS
    domains: tuple = (ALL_DOMAINS,)
    hyperparams: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class StrongCandidate:
    name: str
    overrides: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class StackingConfig:
    n_folds: int = 5
    stage2_methods: tuple = METHODS
    stage3_method: str = "ridge"
    stage2_hyperparams: Mapping = field(default_factory=dict)
    stage3_hyperparams: Mapping = field(default_factory=dict)
    use_weak: bool = True
    strong_candidates: tuple = ()
    strong_oof: str = "per_fold"
    select_k: int | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.strong_oof not in ("per_fold", "shortcut"):
            raise ConfigurationError("stacking.strong_oof must be 'per_fold' or 'shortcut'")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    data: DataConfig = field(default_factory=DataConfig)
    strong: StrongConfig = field(default_factory=StrongConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    textproc: TextprocConfig = field(default_factory=TextprocConfig)
    weak: WeakConfig = field(default_factory=WeakConfig)
    stacking: StackingConfig = field(default_factory=StackingConfig)

    def to_dict(self) -> dict:
        d = _to_plain(self)
        d["stacking"]["strong_candidates"] = [asdict(c) for c in self.stacking.strong_candidates]
        return _lists(d)


def _lists(obj):
    if isinstance(obj, Mapping):
        return {k: _lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_lists(v) for v in obj]
    return obj


def _build(cls, data, section: str):
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {section!r}: {unknown}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad section {section!r}: {exc}") from None


def config_from_dict(raw: Mapping, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigurationError("config must be a mapping")
    unknown = sorted(set(raw) - {f.name for f in fields(RunConfig)})
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s): {unknown}")
    if "seed" not in raw:
        raise ConfigurationError("config must set 'seed'")
    data = _build(DataConfig, raw.get("data"), "data")
    if base_dir is not None:
        data = DataConfig(**{
            f.name: (str((base_dir / v).resolve()) if isinstance(v, str) else v)
            for f in fields(DataConfig) for v in [getattr(data, f.name)]
        })
    stacking_raw = dict(raw.get("stacking") or {})
    candidates = tuple(_build(StrongCandidate, c, "stacking.strong_candidates")
                       for c in stacking_raw.pop("strong_candidates", []) or [])
    stacking = _build(StackingConfig, stacking_raw, "stacking")
    stacking = StackingConfig(**{**{f.name: getattr(stacking, f.name) for f in fields(StackingConfig)},
                                 "strong_candidates": candidates})
    return RunConfig(
        seed=int(raw["seed"]),
        data=data,
        strong=StrongConfig.from_dict(raw.get("strong") or {}),
        augment=_build(AugmentConfig, raw.get("augment"), "augment"),
        textproc=_build(TextprocConfig, raw.get("textproc"), "textproc"),
        weak=_build(WeakConfig, raw.get("weak"), "weak"),
        stacking=stacking,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from None
    return config_from_dict(raw or {}, base_dir=path.parent)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")


CONFIG_KEYS = {
    "seed": "top-level seed; every component derives a named sub-seed from it",
    "data.train_ratings / dev_ratings / test_ratings": "ratings CSVs per split",
    "data.audio_dir": "directory holding <utterance_id>.wav",
    "data.transcripts": "utterance_id<TAB>phonemes file (phoneme encoder)",
    "data.references": "precomputed references file; clustered from transcripts when absent",
    "strong.*": "listener_emb_dim, domain_emb_dim, use_listener, phoneme_encoder{enabled,layers,hidden,"
                "bidirectional,embedding_dim}, head{layers,hidden,bidirectional}, loss{alpha,tau,beta,gamma,"
                "cross_domain_pairs}, optimizer{adam_beta1,adam_beta2,peak_lr,warmup_steps,total_steps,"
                "batch_size,grad_accum}, backend, eval_every, mean_listener_ratio",
    "augment.*": "f_t, f_p, enabled, on_the_fly, offline_copies",
    "textproc.*": "eps, min_pts",
    "weak.*": "backends, methods, domains, hyperparams",
    "stacking.*": "n_folds, stage2_methods, stage3_method, stage2_hyperparams, stage3_hyperparams, use_weak, "
                  "strong_candidates[{name, overrides}], strong_oof (per_fold|shortcut), select_k, n_jobs",
}


def describe_keys(*prefixes: str) -> str:
    lines = ["config keys read:"]
    for key, text in CONFIG_KEYS.items():
        if not prefixes or any(key.startswith(p) for p in prefixes):
            lines.append(f"  {key}: {text}")
    return "\n".join(lines)
