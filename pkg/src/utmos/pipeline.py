"""Glue between a :class:`RunConfig` and the individual modules."""

from __future__ import annotations

import logging
from typing import Mapping

import numpy as np

from .config import RunConfig, sub_seed
from .dataset import MosDataset, load_splits, load_waveforms, mean_listener_targets
from .errors import ConfigurationError
from .stacking import (
    FixedPredictionLearner,
    StackingPlan,
    StrongStackLearner,
    WeakStackLearner,
    greedy_select_strong,
)
from .strong import StrongConfig, _to_plain, train_strong
from .textproc import PhonemeProvider, extract_references, read_references
from .weak import build_learner_bank, extract_embeddings
from .backends import get_backend

log = logging.getLogger(__name__)


def load_run_dataset(cfg: RunConfig) -> MosDataset:
    splits = cfg.data.ratings_by_split()
    if not splits:
        raise ConfigurationError("config names no ratings files (data.train_ratings, ...)")
    if cfg.data.audio_dir is None:
        raise ConfigurationError("config must set data.audio_dir")
    return load_splits(splits, cfg.data.audio_dir)


def phoneme_inputs(cfg: RunConfig, strong: StrongConfig | None = None):
    """(provider, references) when the phoneme encoder is on, else (None, None)."""
    strong = strong or cfg.strong
    if not strong.phoneme_encoder.enabled:
        return None, None
    if not cfg.data.transcripts:
        raise ConfigurationError("phoneme encoder enabled but data.transcripts is not set")
    provider = PhonemeProvider.from_file(cfg.data.transcripts)
    if cfg.data.references:
        refs = read_references(cfg.data.references)
    else:
        refs = extract_references(provider.records(), cfg.textproc.eps, cfg.textproc.min_pts)
    return provider, refs


def _merge(base: Mapping, overrides: Mapping) -> dict:
    out = dict(base)
    for k, v in overrides.items():
        out[k] = _merge(out[k], v) if isinstance(v, Mapping) and isinstance(out.get(k), Mapping) else v
    return out


def strong_variant(cfg: RunConfig, overrides: Mapping) -> StrongConfig:
    return StrongConfig.from_dict(_merge(_to_plain(cfg.strong), overrides))


def run_train_strong(cfg: RunConfig, ds: MosDataset | None = None, waves=None):
    ds = ds or load_run_dataset(cfg)
    phonemes, refs = phoneme_inputs(cfg)
    return train_strong(ds, cfg.strong, cfg.augment, refs, phonemes=phonemes, waves=waves,
                        seed=sub_seed(cfg.seed, "strong"))


def run_extract_embeddings(cfg: RunConfig, ds: MosDataset, waves=None, backends=None):
    waves = waves if waves is not None else load_waveforms(ds)
    return extract_embeddings(waves, [get_backend(b) for b in (backends or cfg.weak.backends)])


def _weak_learners(cfg: RunConfig, ds: MosDataset, embeddings) -> list:
    specs = build_learner_bank(cfg.weak.backends, cfg.weak.methods, cfg.weak.domains, cfg.weak.hyperparams)
    domain_of = {u.utterance_id: u.domain_id for u in ds.utterances}
    learners = []
    for spec in specs:
        table = _lookup_backend(embeddings, spec.backend_id)
        learners.append(WeakStackLearner(spec, table, domain_of, sub_seed(cfg.seed, f"weak:{spec.name}")))
    return learners


def _lookup_backend(embeddings, backend_id):
    if backend_id in embeddings:
        return embeddings[backend_id]
    canonical = get_backend(backend_id).backend_id
    if canonical in embeddings:
        return embeddings[canonical]
    raise ConfigurationError(f"no embeddings for backend {backend_id!r}")


def build_plan(cfg: RunConfig, ds: MosDataset, waves=None, embeddings=None) -> StackingPlan:
    """Stage-1 learners from the config, with optional greedy strong-learner selection."""
    st = cfg.stacking
    learners = []
    if st.use_weak:
        if embeddings is None:
            embeddings = run_extract_embeddings(cfg, ds, waves)
        learners += _weak_learners(cfg, ds, embeddings)

    if st.strong_candidates:
        waves = waves if waves is not None else load_waveforms(ds)
        strong = []
        for cand in st.strong_candidates:
            scfg = strong_variant(cfg, cand.overrides)
            phonemes, refs = phoneme_inputs(cfg, scfg)
            strong.append(StrongStackLearner(f"strong:{cand.name}", ds, scfg, cfg.augment, refs, phonemes,
                                             waves, sub_seed(cfg.seed, f"strong:{cand.name}")))
        needs_full_model = st.select_k is not None or st.strong_oof == "shortcut"
        if needs_full_model:
            train_ids, dev_ids = ds.ids("train"), ds.ids("dev")
            fitted = [l.fit(train_ids) for l in strong]
            if st.select_k is not None:
                dev_true = mean_listener_targets(ds, dev_ids)
                preds = [l.predict(m, dev_ids) for l, m in zip(strong, fitted)]
                keep = greedy_select_strong(preds, dev_ids, dev_true, ds.system_of(), st.select_k)
                log.info("greedy selection kept %s", [strong[i].name for i in keep])
                strong = [strong[i] for i in keep]
                fitted = [fitted[i] for i in keep]
            if st.strong_oof == "shortcut":
                ids = ds.ids()
                strong = [FixedPredictionLearner(l.name, dict(zip(ids, l.predict(m, ids))))
                          for l, m in zip(strong, fitted)]
        learners += strong

    return StackingPlan(
        learners=learners,
        n_folds=st.n_folds,
        stage2_methods=tuple(st.stage2_methods),
        stage3_method=st.stage3_method,
        stage2_hyperparams=dict(st.stage2_hyperparams),
        stage3_hyperparams=dict(st.stage3_hyperparams),
        seed=sub_seed(cfg.seed, "stacking"),
        n_jobs=st.n_jobs,
    )
