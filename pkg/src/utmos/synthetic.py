"""Synthetic listening-test corpus with a known quality law.

Every utterance is a short harmonic tone buried in white noise. Its true MOS
is an affine function of the signal-to-noise ratio, and each system has its
own mean SNR, so system-level rankings are well defined. Listeners carry an
additive bias, and the fake ASR output degrades as SNR drops.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import SAMPLE_RATE, write_ratings, write_wav
from .textproc import TranscriptRecord, random_edits, write_transcripts

PHONEME_ALPHABET = tuple("a e i o u p t k b d g m n s z l r".split())
BASE_TEXTS = (
    tuple("k a t a m a r i n o s u".split()),
    tuple("b e l o g i d e p u z e".split()),
    tuple("s o n u k e t a b o l i".split()),
)

SNR_RANGE = (-5.0, 25.0)


@dataclass(frozen=True)
class ToyCorpus:
    root: Path
    audio_dir: Path
    ratings: dict  # split -> csv path
    transcripts: Path
    true_mos: dict  # utterance_id -> noiseless MOS


def snr_to_mos(snr_db):
    lo, hi = SNR_RANGE
    return np.clip(1.0 + 4.0 * (np.asarray(snr_db) - lo) / (hi - lo), 1.0, 5.0)


def tone_in_noise(snr_db: float, rng: np.random.Generator, duration: float = 1.0, f0: float | None = None) -> np.ndarray:
    n = int(round(duration * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(150.0, 400.0) if f0 is None else f0
    clean = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k for k in (1, 2, 3))
    noise = rng.standard_normal(n)
    gain = np.sqrt(np.mean(clean ** 2) / (np.mean(noise ** 2) * 10 ** (snr_db / 10)))
    x = clean + gain * noise
    return 0.5 * x / np.max(np.abs(x))


def make_toy_corpus(
    root,
    n_train: int = 200,
    n_dev: int = 50,
    n_test: int = 50,
    n_systems: int = 10,
    n_listeners: int = 16,
    ratings_per_utt: int = 4,
    listener_bias: float = 0.4,
    rating_noise: float = 0.5,
    duration_jitter: float = 0.0,
    domain_id: str = "main",
    seed: int = 0,
) -> ToyCorpus:
    """Write WAVs, one ratings CSV per split and a transcripts file under ``root``."""
    root = Path(root)
    audio_dir = root / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    sys_snr = np.linspace(SNR_RANGE[0] + 2, SNR_RANGE[1] - 2, n_systems)
    sys_snr = sys_snr[rng.permutation(n_systems)]
    biases = rng.normal(0.0, listener_bias, n_listeners)

    true_mos: dict[str, float] = {}
    transcripts = []
    ratings_paths = {}
    counter = 0
    for split, n in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        rows = []
        for _ in range(n):
            utt = f"utt{counter:04d}"
            counter += 1
            s = counter % n_systems
            snr = sys_snr[s] + rng.normal(0.0, 3.0)
            duration = 1.0 + (rng.uniform(-duration_jitter, duration_jitter) if duration_jitter else 0.0)
            write_wav(audio_dir / f"{utt}.wav", tone_in_noise(snr, rng, duration))
            mos = float(snr_to_mos(snr))
            true_mos[utt] = mos
            for lst in rng.choice(n_listeners, size=ratings_per_utt, replace=False):
                raw = int(np.clip(np.round(mos + biases[lst] + rng.normal(0.0, rating_noise)), 1, 5))
                rows.append((utt, f"L{lst:02d}", f"sys{s:02d}", domain_id, raw))
            base = BASE_TEXTS[rng.integers(len(BASE_TEXTS))]
            n_err = int(rng.integers(0, 2)) + (1 if mos < 2.5 else 0)
            transcripts.append(TranscriptRecord(utt, random_edits(base, PHONEME_ALPHABET, n_err, rng)))
        path = root / f"{split}_ratings.csv"
        write_ratings(path, rows)
        ratings_paths[split] = path
    tpath = root / "transcripts.tsv"
    write_transcripts(tpath, transcripts)
    return ToyCorpus(root, audio_dir, ratings_paths, tpath, true_mos)


def make_transcript_groups(n_per_group: int, base_texts, max_edits: int, seed: int = 0) -> tuple[list[TranscriptRecord], list[int]]:
    """Transcripts derived from ``base_texts`` with at most ``max_edits`` random edits each.

    Returns the records and the index of the base text each one came from.
    """
    rng = np.random.default_rng(seed)
    records, origin = [], []
    for g, base in enumerate(base_texts):
        for k in range(n_per_group):
            n_edits = int(rng.integers(0, max_edits + 1))
            records.append(TranscriptRecord(f"g{g}_{k:03d}", random_edits(tuple(base), PHONEME_ALPHABET, n_edits, rng)))
            origin.append(g)
    return records, origin
