"""Listening-test data: ratings ingestion, score scaling, splits and audio preparation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import AudioError, DatasetError, MissingTargetError, ScoreRangeError

RATINGS_COLUMNS = ("utterance_id", "listener_id", "system_id", "domain_id", "score")
PREDICTION_COLUMNS = ("utterance_id", "score")

SAMPLE_RATE = 16000
PEAK_LEVEL = 0.95
MEAN_LISTENER = "MEAN_LISTENER"


@dataclass(frozen=True)
class ScoreScale:
    raw_min: float = 1.0
    raw_max: float = 5.0
    norm_min: float = -1.0
    norm_max: float = 1.0

    def normalize(self, raw: float) -> float:
        if not (self.raw_min <= raw <= self.raw_max):
            raise ScoreRangeError(f"score {raw!r} outside [{self.raw_min}, {self.raw_max}]")
        span = (self.norm_max - self.norm_min) / (self.raw_max - self.raw_min)
        return self.norm_min + (raw - self.raw_min) * span

    def denormalize(self, norm: float) -> float:
        span = (self.raw_max - self.raw_min) / (self.norm_max - self.norm_min)
        return self.raw_min + (norm - self.norm_min) * span

    def clamp_raw(self, raw):
        return np.clip(raw, self.raw_min, self.raw_max)


DEFAULT_SCALE = ScoreScale()


def normalize_score(raw: float, scale: ScoreScale = DEFAULT_SCALE) -> float:
    """Map a raw 1-5 MOS value linearly onto [-1, 1]."""
    return scale.normalize(raw)


def denormalize_score(norm: float, scale: ScoreScale = DEFAULT_SCALE) -> float:
    return scale.denormalize(norm)


@dataclass(frozen=True)
class UtteranceRef:
    utterance_id: str
    audio_path: Path
    system_id: str
    domain_id: str


@dataclass(frozen=True)
class RatingRecord:
    utterance_id: str
    listener_id: str
    raw_score: int


def mean_listener_key(domain_id: str) -> str:
    return f"{MEAN_LISTENER}@{domain_id}"


@dataclass(frozen=True)
class MosDataset:
    """Immutable collection of utterances, their ratings and split membership.

    ``listener_index`` starts with one mean-listener entry per domain (in
    domain first-appearance order, so a single-domain corpus has its mean
    listener at index 0), followed by real listeners in first-appearance order.
    """

    utterances: tuple[UtteranceRef, ...]
    ratings: tuple[RatingRecord, ...]
    splits: Mapping[str, frozenset[str]]
    listener_index: Mapping[str, int]
    domain_index: Mapping[str, int]
    _by_id: Mapping[str, UtteranceRef] = field(repr=False, compare=False, default=None)
    _ratings_by_id: Mapping[str, tuple[int, ...]] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        by_id = {u.utterance_id: u for u in self.utterances}
        grouped: dict[str, list[int]] = {}
        for r in self.ratings:
            grouped.setdefault(r.utterance_id, []).append(r.raw_score)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_ratings_by_id", {k: tuple(v) for k, v in grouped.items()})

    @classmethod
    def build(cls, utterances, ratings, splits) -> "MosDataset":
        utterances = tuple(utterances)
        ratings = tuple(ratings)
        known = set()
        for u in utterances:
            if u.utterance_id in known:
                raise DatasetError(f"duplicate utterance_id {u.utterance_id!r}")
            if not u.system_id or not u.domain_id:
                raise DatasetError(f"utterance {u.utterance_id!r} has empty system_id/domain_id")
            known.add(u.utterance_id)
        for r in ratings:
            if r.utterance_id not in known:
                raise DatasetError(f"rating references unknown utterance {r.utterance_id!r}")
        seen: set[str] = set()
        for name, ids in splits.items():
            ids = set(ids)
            if ids & seen:
                raise DatasetError(f"split {name!r} overlaps another split")
            if ids - known:
                raise DatasetError(f"split {name!r} references unknown utterances")
            seen |= ids

        domain_index: dict[str, int] = {}
        for u in utterances:
            domain_index.setdefault(u.domain_id, len(domain_index))
        listener_index = {mean_listener_key(d): i for d, i in domain_index.items()}
        for r in ratings:
            listener_index.setdefault(r.listener_id, len(listener_index))
        return cls(
            utterances=utterances,
            ratings=ratings,
            splits={k: frozenset(v) for k, v in splits.items()},
            listener_index=listener_index,
            domain_index=domain_index,
        )

    def __len__(self) -> int:
        return len(self.utterances)

    def utterance(self, utterance_id: str) -> UtteranceRef:
        return self._by_id[utterance_id]

    def ids(self, split: str | None = None) -> list[str]:
        """Utterance ids in dataset order, optionally restricted to one split."""
        if split is None:
            return [u.utterance_id for u in self.utterances]
        if split not in self.splits:
            raise KeyError(f"unknown split {split!r}")
        members = self.splits[split]
        return [u.utterance_id for u in self.utterances if u.utterance_id in members]

    def scores_of(self, utterance_id: str) -> tuple[int, ...]:
        return self._ratings_by_id.get(utterance_id, ())

    def system_of(self) -> dict[str, str]:
        return {u.utterance_id: u.system_id for u in self.utterances}

    def mean_listener_index(self, domain_id: str) -> int:
        return self.listener_index[mean_listener_key(domain_id)]

    @property
    def listeners(self) -> list[str]:
        return [k for k in self.listener_index if not k.startswith(MEAN_LISTENER + "@")]

    def subset(self, utterance_ids: Iterable[str]) -> "MosDataset":
        """Restrict to the given utterances, keeping every index assignment."""
        keep = set(utterance_ids)
        return MosDataset(
            utterances=tuple(u for u in self.utterances if u.utterance_id in keep),
            ratings=tuple(r for r in self.ratings if r.utterance_id in keep),
            splits={k: frozenset(v & keep) for k, v in self.splits.items()},
            listener_index=self.listener_index,
            domain_index=self.domain_index,
        )

    @classmethod
    def merge(cls, parts: Mapping[str, "MosDataset"]) -> "MosDataset":
        """Combine single-split datasets into one, keyed by split name."""
        utterances, ratings, splits = [], [], {}
        for name, part in parts.items():
            utterances.extend(part.utterances)
            ratings.extend(part.ratings)
            splits[name] = set(part.ids())
        return cls.build(utterances, ratings, splits)


def _parse_score(text: str, line: int) -> int:
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"score {text!r} is not a number", line) from None
    if not value.is_integer():
        raise DatasetError(f"score {text!r} is not an integer", line)
    if not 1 <= value <= 5:
        raise DatasetError(f"score {int(value)} outside 1..5", line)
    return int(value)


def load_dataset(ratings_csv, audio_dir, split: str = "train") -> MosDataset:
    """Read a ratings CSV into a dataset whose utterances all belong to ``split``.

    Audio paths are ``audio_dir/<utterance_id>.wav``; files are not touched
    until :func:`prepare_audio` is called.
    """
    ratings_csv = Path(ratings_csv)
    audio_dir = Path(audio_dir)
    utterances: dict[str, UtteranceRef] = {}
    ratings: list[RatingRecord] = []
    with ratings_csv.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError("missing header", 1)
        header = [h.strip() for h in header]
        if tuple(header) != RATINGS_COLUMNS:
            extra = sorted(set(header) - set(RATINGS_COLUMNS))
            missing = sorted(set(RATINGS_COLUMNS) - set(header))
            raise DatasetError(
                f"header must be {','.join(RATINGS_COLUMNS)} (unknown={extra}, missing={missing})", 1
            )
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(RATINGS_COLUMNS):
                raise DatasetError(f"expected {len(RATINGS_COLUMNS)} fields, got {len(row)}", line)
            utt, listener, system, domain, score = (c.strip() for c in row)
            if not utt or not listener or not system or not domain:
                raise DatasetError("empty identifier field", line)
            raw = _parse_score(score, line)
            ref = UtteranceRef(utt, audio_dir / f"{utt}.wav", system, domain)
            prev = utterances.setdefault(utt, ref)
            if prev != ref:
                raise DatasetError(
                    f"utterance {utt!r} redeclared with different system/domain", line
                )
            ratings.append(RatingRecord(utt, listener, raw))
    return MosDataset.build(utterances.values(), ratings, {split: set(utterances)})


def load_splits(ratings_by_split: Mapping[str, Path], audio_dir) -> MosDataset:
    return MosDataset.merge(
        {name: load_dataset(path, audio_dir, split=name) for name, path in ratings_by_split.items()}
    )


def mean_listener_targets(ds: MosDataset, utterance_ids: Iterable[str] | None = None) -> dict[str, float]:
    """Per-utterance mean raw score (the mean listener's target)."""
    ids = ds.ids() if utterance_ids is None else list(utterance_ids)
    out = {}
    for utt in ids:
        scores = ds.scores_of(utt)
        if not scores:
            raise MissingTargetError(f"utterance {utt!r} has no ratings")
        out[utt] = math.fsum(scores) / len(scores)
    return out


def write_ratings(path, rows: Iterable[tuple[str, str, str, str, int]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATINGS_COLUMNS)
        for row in rows:
            w.writerow(row)


# -- predictions CSV ---------------------------------------------------------

def write_predictions(path, predictions: Mapping[str, float]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for utt, score in predictions.items():
            w.writerow([utt, f"{float(score):.6f}"])


def read_predictions(path) -> dict[str, float]:
    out: dict[str, float] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PREDICTION_COLUMNS:
            raise DatasetError(f"header must be {','.join(PREDICTION_COLUMNS)}", 1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DatasetError(f"expected 2 fields, got {len(row)}", line)
            try:
                score = float(row[1])
            except ValueError:
                raise DatasetError(f"score {row[1]!r} is not a number", line) from None
            if row[0] in out:
                raise DatasetError(f"duplicate prediction for {row[0]!r}", line)
            out[row[0]] = score
    return out


# -- audio -------------------------------------------------------------------

def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file as float64 mono samples in [-1, 1]."""
    try:
        sr, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise AudioError(f"cannot read {path}: {exc}") from exc
    if data.dtype.kind == "i":
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    elif data.dtype.kind == "u":
        info = np.iinfo(data.dtype)
        data = (data.astype(np.float64) - (info.max + 1) / 2) / ((info.max + 1) / 2)
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return data, int(sr)


def write_wav(path, wave: np.ndarray, sr: int = SAMPLE_RATE) -> None:
    """Write 16-bit PCM."""
    pcm = np.clip(np.round(np.asarray(wave) * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), sr, pcm)


def resample(wave: np.ndarray, sr_in: int, sr_out: int = SAMPLE_RATE) -> np.ndarray:
    if sr_in == sr_out:
        return np.asarray(wave, dtype=np.float64)
    g = math.gcd(sr_in, sr_out)
    return resample_poly(wave, sr_out // g, sr_in // g)


def peak_normalize(wave: np.ndarray, level: float = PEAK_LEVEL) -> np.ndarray:
    wave = np.asarray(wave, dtype=np.float64)
    if wave.size == 0:
        raise AudioError("zero-length audio")
    peak = np.max(np.abs(wave))
    if not np.isfinite(peak) or peak == 0.0:
        raise AudioError("silent or non-finite audio; peak normalization undefined")
    return wave * (level / peak)


def prepare_audio(u: UtteranceRef | str | Path) -> np.ndarray:
    """Load audio, resample to 16 kHz, then peak-normalize to 0.95."""
    path = u.audio_path if isinstance(u, UtteranceRef) else Path(u)
    wave, sr = read_wav(path)
    if wave.size == 0:
        raise AudioError(f"{path}: zero-length audio")
    wave = resample(wave, sr, SAMPLE_RATE)
    try:
        return peak_normalize(wave)
    except AudioError as exc:
        raise AudioError(f"{path}: {exc}") from None


def load_waveforms(ds: MosDataset, utterance_ids: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    ids = ds.ids() if utterance_ids is None else utterance_ids
    return {utt: prepare_audio(ds.utterance(utt)) for utt in ids}
