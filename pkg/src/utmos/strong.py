"""Strong learner: frame-level recurrent scorer over backend features.

Each frame of backend features is concatenated with a listener embedding, a
domain embedding and (optionally) a phoneme context vector, run through a
bidirectional LSTM and projected to one score per frame. Training targets are
the normalized rating replicated over frames; inference averages the frame
scores produced with the domain's mean-listener embedding.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .augment import AugmentConfig, augment
from .backends import get_backend
from .dataset import DEFAULT_SCALE, MosDataset, load_waveforms, mean_listener_targets
from .errors import ConfigurationError, VocabularyError
from .losses import LossConfig, torch_combined_loss
from .metrics import srcc, system_aggregate
from .textproc import ReferenceAssignment

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "utmos-strong-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PhonemeEncoderConfig:
    enabled: bool = True
    layers: int = 3
    hidden: int = 256
    bidirectional: bool = True
    embedding_dim: int = 256

    @property
    def context_dim(self) -> int:
        # two sequences x (initial state, last state) x hidden
        return 4 * self.hidden if self.enabled else 0


@dataclass(frozen=True)
class HeadConfig:
    layers: int = 1
    hidden: int = 256
    bidirectional: bool = True


@dataclass(frozen=True)
class OptimizerConfig:
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    peak_lr: float = 3e-5
    warmup_steps: int = 4000
    total_steps: int = 15000
    batch_size: int = 12
    grad_accum: int = 2


@dataclass(frozen=True)
class StrongConfig:
    listener_emb_dim: int = 128
    domain_emb_dim: int = 128
    use_listener: bool = True
    phoneme_encoder: PhonemeEncoderConfig = field(default_factory=PhonemeEncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    backend: str = "toy"
    eval_every: int = 500
    mean_listener_ratio: int = 1

    def __post_init__(self):
        opt = self.optimizer
        if opt.warmup_steps >= opt.total_steps:
            raise ConfigurationError("warmup_steps must be smaller than total_steps")
        if opt.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2 for pairwise loss")
        if opt.grad_accum < 1 or self.eval_every < 1:
            raise ConfigurationError("grad_accum and eval_every must be positive")

    @classmethod
    def from_dict(cls, data: Mapping) -> "StrongConfig":
        return _from_dict(cls, data)


def _from_dict(cls, data):
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        if key not in known:
            raise ConfigurationError(f"unknown key {key!r} for {cls.__name__}")
        sub = _nested_types.get((cls.__name__, key))
        kwargs[key] = _from_dict(sub, value) if sub is not None and isinstance(value, Mapping) else value
    return cls(**kwargs)


_nested_types = {
    ("StrongConfig", "phoneme_encoder"): PhonemeEncoderConfig,
    ("StrongConfig", "head"): HeadConfig,
    ("StrongConfig", "loss"): LossConfig,
    ("StrongConfig", "optimizer"): OptimizerConfig,
}


def toy_strong_config(**overrides) -> StrongConfig:
    """Small configuration that trains in minutes on a CPU with the toy backend."""
    cfg = StrongConfig(
        listener_emb_dim=16,
        domain_emb_dim=8,
        phoneme_encoder=PhonemeEncoderConfig(layers=1, hidden=16, embedding_dim=16),
        head=HeadConfig(layers=1, hidden=32),
        optimizer=OptimizerConfig(peak_lr=1e-3, warmup_steps=100, total_steps=1000, batch_size=12, grad_accum=2),
        eval_every=100,
    )
    return replace(cfg, **overrides)


def lr_schedule(step: int, opt: OptimizerConfig) -> float:
    """Linear warmup to ``peak_lr`` followed by linear decay to zero."""
    if not 0 <= step <= opt.total_steps:
        raise ValueError(f"step {step} outside [0, {opt.total_steps}]")
    if step <= opt.warmup_steps:
        return opt.peak_lr * step / opt.warmup_steps
    return opt.peak_lr * (opt.total_steps - step) / (opt.total_steps - opt.warmup_steps)


def make_frame_targets(score: float, n_frames: int) -> np.ndarray:
    if n_frames < 1:
        raise ValueError("need at least one frame")
    return np.full(n_frames, float(score))


# -- model -------------------------------------------------------------------

class Vocabulary:
    """Phoneme symbol table; id 0 is padding."""

    def __init__(self, symbols: Sequence[str]):
        self.symbols = list(dict.fromkeys(symbols))
        self._ids = {s: i + 1 for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols) + 1

    def encode(self, seq: Sequence[str]) -> list[int]:
        try:
            return [self._ids[s] for s in seq]
        except KeyError as exc:
            raise VocabularyError(f"unknown phoneme symbol {exc.args[0]!r}") from None

    @classmethod
    def from_sequences(cls, seqs) -> "Vocabulary":
        return cls(sorted({s for seq in seqs for s in seq}))


class PhonemeEncoder(nn.Module):
    """Encodes (phonemes, reference) into one fixed-size context vector.

    For each sequence the recurrent state at the first and at the last
    position are kept: with a bidirectional LSTM these are the final
    backward and forward states of the top layer. The two sequences' halves
    are concatenated, giving ``4 * hidden`` values. An empty sequence gets a
    learned null vector instead.
    """

    def __init__(self, vocab_size: int, cfg: PhonemeEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(vocab_size, cfg.embedding_dim, padding_idx=0)
        self.rnn = nn.LSTM(cfg.embedding_dim, cfg.hidden, num_layers=cfg.layers,
                           bidirectional=cfg.bidirectional, batch_first=True)
        self.null = nn.Parameter(torch.randn(2, 2 * cfg.hidden) * 0.1)

    def _encode(self, ids: torch.Tensor, lengths: torch.Tensor, slot: int) -> torch.Tensor:
        safe = lengths.clamp(min=1)
        packed = pack_padded_sequence(self.embed(ids), safe.cpu(), batch_first=True, enforce_sorted=False)
        out, (h_n, _) = self.rnn(packed)
        if self.cfg.bidirectional:
            state = torch.cat([h_n[-1], h_n[-2]], dim=-1)  # backward (at t=0), forward (at t=end)
        else:
            padded, _ = pad_packed_sequence(out, batch_first=True)
            first = padded[:, 0]
            last = padded[torch.arange(padded.shape[0]), safe - 1]
            state = torch.cat([first, last], dim=-1)
        empty = (lengths == 0)[:, None]
        return torch.where(empty, self.null[slot].expand_as(state), state)

    def forward(self, ph_ids, ph_len, ref_ids, ref_len) -> torch.Tensor:
        return torch.cat([self._encode(ph_ids, ph_len, 0), self._encode(ref_ids, ref_len, 1)], dim=-1)


class StrongModel(nn.Module):
    def __init__(self, feat_dim: int, n_listeners: int, n_domains: int, vocab_size: int, cfg: StrongConfig):
        super().__init__()
        self.cfg = cfg
        self.feat_dim = feat_dim
        self.listener_emb = nn.Embedding(n_listeners, cfg.listener_emb_dim)
        self.domain_emb = nn.Embedding(n_domains, cfg.domain_emb_dim)
        pe = cfg.phoneme_encoder
        self.phoneme_encoder = PhonemeEncoder(vocab_size, pe) if pe.enabled else None
        in_dim = feat_dim + cfg.listener_emb_dim + cfg.domain_emb_dim + pe.context_dim
        h = cfg.head
        self.rnn = nn.LSTM(in_dim, h.hidden, num_layers=h.layers, bidirectional=h.bidirectional, batch_first=True)
        self.out = nn.Linear(h.hidden * (2 if h.bidirectional else 1), 1)

    @property
    def context_dim(self) -> int:
        return self.cfg.phoneme_encoder.context_dim

    def forward(self, feats, lengths, listener_idx, domain_idx, context=None) -> torch.Tensor:
        """Frame scores [B, T]; positions past ``lengths`` are zero."""
        B, T, D = feats.shape
        if D != self.feat_dim:
            raise ConfigurationError(f"feature dim {D} != model feature dim {self.feat_dim}")
        parts = [feats, self.listener_emb(listener_idx)[:, None].expand(B, T, -1),
                 self.domain_emb(domain_idx)[:, None].expand(B, T, -1)]
        if self.context_dim:
            if context is None or context.shape != (B, self.context_dim):
                raise ConfigurationError(f"phoneme context must have shape ({B}, {self.context_dim})")
            parts.append(context[:, None].expand(B, T, -1))
        x = torch.cat(parts, dim=-1)
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.rnn(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=T)
        scores = self.out(out).squeeze(-1)
        mask = torch.arange(T)[None, :] < lengths[:, None]
        return scores * mask


# -- inputs ------------------------------------------------------------------

def _pad_ids(seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    ids = torch.zeros(len(seqs), max(1, int(lengths.max())), dtype=torch.long)
    for i, s in enumerate(seqs):
        if s:
            ids[i, :len(s)] = torch.tensor(s, dtype=torch.long)
    return ids, lengths


def _pad_frames(frames: Sequence[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([f.shape[0] for f in frames], dtype=torch.long)
    D = frames[0].shape[1]
    x = torch.zeros(len(frames), int(lengths.max()), D, dtype=torch.float32)
    for i, f in enumerate(frames):
        x[i, :f.shape[0]] = torch.from_numpy(np.asarray(f, dtype=np.float32))
    return x, lengths


@dataclass
class StrongScorer:
    """A model together with everything needed to feed it."""

    model: StrongModel
    config: StrongConfig
    vocab: Vocabulary
    listener_index: dict
    domain_index: dict
    mean_listener: dict  # domain_id -> listener index

    def __post_init__(self):
        self.backend = get_backend(self.config.backend)

    def _context(self, phonemes, references) -> torch.Tensor | None:
        if self.model.phoneme_encoder is None:
            return None
        ph_ids, ph_len = _pad_ids([self.vocab.encode(p) for p in phonemes])
        ref_ids, ref_len = _pad_ids([self.vocab.encode(r) for r in references])
        return self.model.phoneme_encoder(ph_ids, ph_len, ref_ids, ref_len)

    def frame_scores(self, frames, listener_idx, domain_idx, phonemes=None, references=None) -> torch.Tensor:
        x, lengths = _pad_frames(frames)
        ctx = self._context(phonemes, references) if self.model.phoneme_encoder is not None else None
        return self.model(
            x, lengths,
            torch.as_tensor(listener_idx, dtype=torch.long),
            torch.as_tensor(domain_idx, dtype=torch.long),
            ctx,
        ), lengths

    def domain_idx(self, domain_id: str) -> int:
        if domain_id not in self.domain_index:
            raise ConfigurationError(f"unknown domain {domain_id!r}; known: {sorted(self.domain_index)}")
        return self.domain_index[domain_id]

    @torch.no_grad()
    def predict_features(self, frames: Sequence[np.ndarray], domain_ids: Sequence[str],
                         phonemes=None, references=None, batch_size: int = 32) -> np.ndarray:
        """Raw-scale MOS predictions (clamped to [1, 5]) using mean listeners."""
        self.model.eval()
        out = []
        for start in range(0, len(frames), batch_size):
            sl = slice(start, start + batch_size)
            doms = list(domain_ids[sl])
            didx = [self.domain_idx(d) for d in doms]
            lidx = [self.mean_listener[d] for d in doms]
            ph = phonemes[sl] if phonemes is not None else None
            rf = references[sl] if references is not None else None
            scores, lengths = self.frame_scores(frames[sl], lidx, didx, ph, rf)
            norm = (scores.sum(dim=1) / lengths).double().numpy()
            out.append(norm)
        norm = np.concatenate(out) if out else np.zeros(0)
        return DEFAULT_SCALE.clamp_raw(DEFAULT_SCALE.denormalize(norm))

    def predict_waves(self, waves: Sequence[np.ndarray], domain_ids, phonemes=None, references=None) -> np.ndarray:
        frames = [self.backend.extract(w).frames for w in waves]
        return self.predict_features(frames, domain_ids, phonemes, references)


def encode_phoneme_context(scorer: StrongScorer, phonemes: Sequence[str], reference: Sequence[str]) -> np.ndarray:
    if scorer.model.phoneme_encoder is None:
        raise ConfigurationError("model has no phoneme encoder")
    scorer.model.eval()
    with torch.no_grad():
        return scorer._context([tuple(phonemes)], [tuple(reference)])[0].double().numpy()


def predict_utterance(scorer: StrongScorer, wave: np.ndarray, phonemes=None, reference=None, domain_id: str | None = None) -> float:
    """Mean of the frame scores under the mean listener, on the raw 1-5 scale."""
    if domain_id is None:
        domain_id = next(iter(scorer.domain_index))
    ph = [tuple(phonemes)] if scorer.model.phoneme_encoder is not None else None
    rf = [tuple(reference)] if scorer.model.phoneme_encoder is not None else None
    return float(scorer.predict_waves([wave], [domain_id], ph, rf)[0])


# -- checkpoints -------------------------------------------------------------

@dataclass
class StrongCheckpoint:
    parameters: dict  # name -> float32 ndarray
    config: StrongConfig
    meta: dict
    dev_system_srcc: float
    step: int
    history: list = field(default_factory=list)

    def to_scorer(self) -> StrongScorer:
        m = self.meta
        model = StrongModel(m["feat_dim"], len(m["listener_index"]), len(m["domain_index"]),
                            len(m["vocab"]) + 1, self.config)
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.parameters.items()})
        model.eval()
        return StrongScorer(model, self.config, Vocabulary(m["vocab"]), dict(m["listener_index"]),
                            dict(m["domain_index"]), dict(m["mean_listener"]))

    def save(self, path) -> None:
        blobs = {
            name: {"dtype": "float32", "shape": list(arr.shape),
                   "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")}
            for name, arr in self.parameters.items()
        }
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": _to_plain(self.config),
            "meta": self.meta,
            "step": self.step,
            "dev_system_srcc": self.dev_system_srcc,
            "history": self.history,
            "parameters": blobs,
        }
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "StrongCheckpoint":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ConfigurationError(f"{path} is not a strong-learner checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {doc.get('version')!r}")
        params = {
            name: np.frombuffer(base64.b64decode(b["data"]), dtype="<f4").reshape(b["shape"]).copy()
            for name, b in doc["parameters"].items()
        }
        return cls(params, StrongConfig.from_dict(doc["config"]), doc["meta"],
                   doc["dev_system_srcc"], doc["step"], doc["history"])


def _to_plain(obj):
    if is_dataclass(obj):
        return {k: _to_plain(v) for k, v in asdict(obj).items()}
    return obj


def _snapshot(model: nn.Module) -> dict:
    return {k: v.detach().numpy().astype(np.float32, copy=True) for k, v in model.state_dict().items()}


# -- training ----------------------------------------------------------------

def _reference_table(refs) -> dict:
    if refs is None:
        return {}
    if isinstance(refs, Mapping):
        return {k: tuple(v) for k, v in refs.items()}
    return {r.utterance_id: tuple(r.reference) for r in refs}


def train_strong(
    ds: MosDataset,
    cfg: StrongConfig,
    aug: AugmentConfig | None = None,
    refs: Sequence[ReferenceAssignment] | Mapping | None = None,
    *,
    phonemes=None,
    waves: Mapping[str, np.ndarray] | None = None,
    seed: int = 0,
    train_ids: Sequence[str] | None = None,
    dev_split: str = "dev",
) -> StrongCheckpoint:
    """Train on the ``train`` split and keep the best dev system-level SRCC checkpoint.

    ``phonemes`` maps utterance ids to ASR phoneme sequences and ``refs``
    supplies each utterance's reference sequence; both are needed when the
    phoneme encoder is enabled. One optimizer step consumes
    ``grad_accum`` mini-batches.
    """
    opt_cfg = cfg.optimizer
    train_ids = list(ds.ids("train") if train_ids is None else train_ids)
    dev_ids = ds.ids(dev_split) if dev_split in ds.splits else []
    if not dev_ids:
        raise ConfigurationError("train_strong needs a non-empty dev split")
    if len(train_ids) < 2:
        raise ConfigurationError("train_strong needs at least two training utterances")
    use_ph = cfg.phoneme_encoder.enabled
    ref_table = _reference_table(refs)
    if use_ph and (phonemes is None or not ref_table):
        raise ConfigurationError("phoneme encoder enabled but phonemes/references not supplied")

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    backend = get_backend(cfg.backend)
    needed = train_ids + dev_ids
    if waves is None:
        waves = load_waveforms(ds, needed)
    seqs = {}
    if use_ph:
        seqs = {u: (tuple(phonemes(u)), ref_table[u]) for u in needed}
        vocab = Vocabulary.from_sequences([s for pair in seqs.values() for s in pair])
    else:
        vocab = Vocabulary([])

    feat_cache = {u: backend.extract(waves[u], u).frames for u in needed}
    feat_dim = next(iter(feat_cache.values())).shape[1]
    mean_listener = {d: ds.mean_listener_index(d) for d in ds.domain_index}
    model = StrongModel(feat_dim, len(ds.listener_index), len(ds.domain_index), len(vocab), cfg)
    scorer = StrongScorer(model, cfg, vocab, dict(ds.listener_index), dict(ds.domain_index), mean_listener)

    # (utterance_id, listener index, normalized target, source key)
    by_utt: dict[str, list] = {}
    for r in ds.ratings:
        by_utt.setdefault(r.utterance_id, []).append((r.listener_id, r.raw_score))
    examples = []
    for utt in train_ids:
        domain = ds.utterance(utt).domain_id
        if cfg.use_listener:
            examples += [(utt, ds.listener_index[r], DEFAULT_SCALE.normalize(s), 0) for r, s in by_utt.get(utt, [])]
        target = DEFAULT_SCALE.normalize(mean_listener_targets(ds, [utt])[utt])
        examples += [(utt, mean_listener[domain], target, 0)] * max(1, cfg.mean_listener_ratio)

    offline: dict[tuple[str, int], np.ndarray] = {}
    if aug is not None and aug.enabled and not aug.on_the_fly:
        base = list(examples)
        for copy_no in range(1, aug.offline_copies + 1):
            for utt in train_ids:
                offline[utt, copy_no] = backend.extract(augment(waves[utt], aug, rng), utt).frames
            examples += [(u, l, t, copy_no) for (u, l, t, _) in base]

    def features_of(utt: str, source: int) -> np.ndarray:
        if source:
            return offline[utt, source]
        if aug is not None and aug.enabled and aug.on_the_fly:
            return backend.extract(augment(waves[utt], aug, rng), utt).frames
        return feat_cache[utt]

    optimizer = torch.optim.Adam(model.parameters(), lr=lr_schedule(1, opt_cfg),
                                 betas=(opt_cfg.adam_beta1, opt_cfg.adam_beta2))
    dev_true = mean_listener_targets(ds, dev_ids)
    system_of = ds.system_of()
    dev_frames = [feat_cache[u] for u in dev_ids]
    dev_domains = [ds.utterance(u).domain_id for u in dev_ids]
    dev_ph = [seqs[u][0] for u in dev_ids] if use_ph else None
    dev_rf = [seqs[u][1] for u in dev_ids] if use_ph else None

    def evaluate_dev(step: int) -> dict:
        preds = scorer.predict_features(dev_frames, dev_domains, dev_ph, dev_rf)
        pred_by = dict(zip(dev_ids, preds))
        ps, ts = system_aggregate(pred_by, dev_true, system_of)
        systems = list(ts)
        return {
            "step": step,
            "utterance_srcc": _safe(srcc, preds, [dev_true[u] for u in dev_ids]),
            "system_srcc": _safe(srcc, [ps[s] for s in systems], [ts[s] for s in systems]),
        }

    history: list[dict] = []
    best = None
    order: list[int] = []
    bs = opt_cfg.batch_size
    step = 0
    while step < opt_cfg.total_steps:
        model.train()
        optimizer.zero_grad()
        for _ in range(opt_cfg.grad_accum):
            if len(order) < bs:
                order += rng.permutation(len(examples)).tolist()
            batch = [examples[i] for i in order[:bs]]
            del order[:bs]
            frames = [features_of(u, src) for (u, _, _, src) in batch]
            doms = [ds.utterance(u).domain_id for (u, _, _, _) in batch]
            ph = [seqs[u][0] for (u, _, _, _) in batch] if use_ph else None
            rf = [seqs[u][1] for (u, _, _, _) in batch] if use_ph else None
            scores, lengths = scorer.frame_scores(
                frames, [l for (_, l, _, _) in batch], [ds.domain_index[d] for d in doms], ph, rf)
            target = torch.tensor([t for (_, _, t, _) in batch], dtype=torch.float32)
            pair_mask = None
            if not cfg.loss.cross_domain_pairs:
                pair_mask = torch.tensor([[a == b for b in doms] for a in doms], dtype=torch.float32)
            loss = torch_combined_loss(target, scores, lengths, cfg.loss, pair_mask) / opt_cfg.grad_accum
            loss.backward()
        step += 1
        for group in optimizer.param_groups:
            group["lr"] = lr_schedule(step, opt_cfg)
        optimizer.step()

        if step % cfg.eval_every == 0 or step == opt_cfg.total_steps:
            record = evaluate_dev(step)
            record["loss"] = float(loss.detach()) * opt_cfg.grad_accum
            history.append(record)
            log.info("step %d dev utt SRCC %.4f sys SRCC %.4f", step, record["utterance_srcc"], record["system_srcc"])
            if best is None or record["system_srcc"] > best[0]:
                best = (record["system_srcc"], step, _snapshot(model))

    meta = {
        "feat_dim": int(feat_dim),
        "backend_id": backend.backend_id,
        "vocab": list(vocab.symbols),
        "listener_index": dict(ds.listener_index),
        "domain_index": dict(ds.domain_index),
        "mean_listener": mean_listener,
        "seed": int(seed),
    }
    return StrongCheckpoint(best[2], cfg, meta, float(best[0]), best[1], history)


def _safe(fn, a, b) -> float:
    try:
        return float(fn(a, b))
    except ValueError:
        return float("-inf")
