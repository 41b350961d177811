"""ASR transcript handling: edit distance, DBSCAN clustering and reference extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import TranscriptLookupError

NOISE = -1

Symbols = tuple[str, ...]


@dataclass(frozen=True)
class TranscriptRecord:
    utterance_id: str
    phonemes: Symbols

    @property
    def empty(self) -> bool:
        return len(self.phonemes) == 0


@dataclass(frozen=True)
class ReferenceAssignment:
    utterance_id: str
    cluster_id: int
    reference: Symbols


def levenshtein(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalized_levenshtein(a: Sequence, b: Sequence) -> float:
    """Edit distance divided by the longer length; 0 for two empty sequences."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


def pairwise_distances(items: Sequence, dist: Callable) -> np.ndarray:
    n = len(items)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = dist(items[i], items[j])
    return d


def _canonical_order(items: Sequence) -> list[int]:
    try:
        return sorted(range(len(items)), key=lambda i: items[i])
    except TypeError:
        return list(range(len(items)))


def dbscan(items: Sequence, dist: Callable, eps: float, min_pts: int) -> list[int]:
    """Density-based clustering over an arbitrary distance.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Items are processed in sorted order (input order if they
    do not sort), so the result does not depend on how the input is shuffled:
    clusters are numbered by their smallest core member and a border point
    joins the cluster of its smallest reachable core point. Returns one label
    per item, ``-1`` for noise.
    """
    if eps < 0 or min_pts < 1:
        raise ValueError("need eps >= 0 and min_pts >= 1")
    n = len(items)
    if n == 0:
        return []
    order = _canonical_order(items)
    canon = [items[i] for i in order]
    d = pairwise_distances(canon, dist)
    neighbors = d <= eps
    core = neighbors.sum(axis=1) >= min_pts

    labels = np.full(n, NOISE)
    next_id = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = next_id
        stack = [i]
        while stack:
            k = stack.pop()
            for j in np.flatnonzero(neighbors[k] & core):
                if labels[j] == NOISE:
                    labels[j] = next_id
                    stack.append(j)
        next_id += 1
    for i in np.flatnonzero(~core):
        reach = np.flatnonzero(neighbors[i] & core)
        if reach.size:
            labels[i] = labels[reach[0]]

    out = [NOISE] * n
    for pos, original in enumerate(order):
        out[original] = int(labels[pos])
    return out


def medoid(cluster: Sequence[Sequence], dist: Callable) -> Sequence:
    """Member with the smallest summed distance to the others.

    Ties go to the lexicographically smallest member.
    """
    if len(cluster) == 0:
        raise ValueError("medoid of an empty cluster")
    d = pairwise_distances(cluster, dist)
    totals = d.sum(axis=1)
    best = totals.min()
    tied = [cluster[i] for i in range(len(cluster)) if math.isclose(totals[i], best, rel_tol=1e-12, abs_tol=1e-12)]
    return min(tied, key=tuple)


def extract_references(
    transcripts: Iterable[TranscriptRecord], eps: float = 0.3, min_pts: int = 2
) -> list[ReferenceAssignment]:
    """Cluster transcripts and give each one its cluster medoid as reference.

    Noise points keep their own transcript as reference.
    """
    records = list(transcripts)
    seqs = [r.phonemes for r in records]
    labels = dbscan(seqs, normalized_levenshtein, eps, min_pts)
    refs: dict[int, Symbols] = {}
    for label in sorted(set(labels) - {NOISE}):
        members = [s for s, lab in zip(seqs, labels) if lab == label]
        refs[label] = tuple(medoid(members, normalized_levenshtein))
    return [
        ReferenceAssignment(r.utterance_id, lab, refs[lab] if lab != NOISE else r.phonemes)
        for r, lab in zip(records, labels)
    ]


# -- files -------------------------------------------------------------------

def _split_line(line: str, lineno: int, path) -> list[str]:
    parts = line.rstrip("\n").rstrip("\r").split("\t")
    if len(parts) < 2:
        raise ValueError(f"{path}:{lineno}: expected utterance_id<TAB>phonemes")
    return parts


def read_transcripts(path) -> list[TranscriptRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = _split_line(line, lineno, path)
            out.append(TranscriptRecord(parts[0], tuple(parts[1].split())))
    return out


def write_transcripts(path, records: Iterable[TranscriptRecord]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(f"{r.utterance_id}\t{' '.join(r.phonemes)}\n")


def write_references(path, assignments: Iterable[ReferenceAssignment]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for a in assignments:
            fh.write(f"{a.utterance_id}\t{' '.join(a.reference)}\t{a.cluster_id}\n")


def read_references(path) -> list[ReferenceAssignment]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = _split_line(line, lineno, path)
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected utterance_id<TAB>reference<TAB>cluster_id")
            out.append(ReferenceAssignment(parts[0], int(parts[2]), tuple(parts[1].split())))
    return out


# -- phoneme providers -------------------------------------------------------

class PhonemeProvider:
    """Maps an utterance id to its (precomputed) ASR phoneme sequence."""

    def __init__(self, transcripts: Mapping[str, Symbols]):
        self._table = {k: tuple(v) for k, v in transcripts.items()}

    def __call__(self, utterance_id: str) -> Symbols:
        try:
            return self._table[utterance_id]
        except KeyError:
            raise TranscriptLookupError(f"no transcript for {utterance_id!r}") from None

    def __contains__(self, utterance_id: str) -> bool:
        return utterance_id in self._table

    def records(self) -> list[TranscriptRecord]:
        return [TranscriptRecord(k, v) for k, v in self._table.items()]

    @classmethod
    def from_file(cls, path) -> "PhonemeProvider":
        return cls({r.utterance_id: r.phonemes for r in read_transcripts(path)})


class SyntheticPhonemeProvider(PhonemeProvider):
    """Deterministic fake ASR output for tests and demos.

    Each utterance is assigned one of ``base_texts`` (by ``text_of``) and
    receives up to ``max_edits`` random substitutions/insertions/deletions,
    seeded per utterance id.
    """

    def __init__(self, text_of: Mapping[str, Symbols], alphabet: Sequence[str], max_edits: int = 1, seed: int = 0):
        table = {}
        for utt, base in text_of.items():
            rng = np.random.default_rng([seed, _stable_hash(utt)])
            table[utt] = random_edits(tuple(base), alphabet, int(rng.integers(0, max_edits + 1)), rng)
        super().__init__(table)


def random_edits(seq: Symbols, alphabet: Sequence[str], n_edits: int, rng) -> Symbols:
    out = list(seq)
    for _ in range(n_edits):
        op = rng.integers(0, 3) if out else 1
        if op == 0:
            out[rng.integers(0, len(out))] = alphabet[rng.integers(0, len(alphabet))]
        elif op == 1:
            out.insert(int(rng.integers(0, len(out) + 1)), alphabet[rng.integers(0, len(alphabet))])
        else:
            del out[rng.integers(0, len(out))]
    return tuple(out)


def _stable_hash(text: str) -> int:
    import zlib

    return zlib.crc32(text.encode("utf-8"))
