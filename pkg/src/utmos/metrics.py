"""MSE, LCC, SRCC and KTAU at utterance and system level."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import CoverageError, MetricError, UndefinedCorrelationError

METRIC_NAMES = ("mse", "lcc", "srcc", "ktau")


def _pair(pred, true, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(true, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise MetricError(f"length mismatch: {p.size} vs {t.size}")
    if p.size < min_len:
        raise MetricError(f"need at least {min_len} values, got {p.size}")
    return p, t


def mse(pred, true) -> float:
    p, t = _pair(pred, true)
    return float(np.mean((p - t) ** 2))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    xc = x - x.mean()
    yc = y - y.mean()
    # rescale so tiny or huge inputs neither underflow nor overflow
    xc = xc / np.max(np.abs(xc))
    yc = yc / np.max(np.abs(yc))
    # one sqrt of the product keeps r == 1 exact for identical inputs
    denom = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    return float(np.clip(np.dot(xc, yc) / denom, -1.0, 1.0))


def lcc(pred, true) -> float:
    """Pearson linear correlation coefficient."""
    p, t = _pair(pred, true, 2)
    return _pearson(p, t)


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties given the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # run boundaries of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.size]
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(x.size, dtype=np.float64)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def srcc(pred, true) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    p, t = _pair(pred, true, 2)
    return _pearson(average_ranks(p), average_ranks(t))


def ktau(pred, true) -> float:
    """Kendall tau-b, tie-corrected."""
    p, t = _pair(pred, true, 2)
    iu = np.triu_indices(p.size, k=1)
    dp = np.sign(p[:, None] - p[None, :])[iu]
    dt = np.sign(t[:, None] - t[None, :])[iu]
    n0 = dp.size
    tied_p = np.count_nonzero(dp == 0)
    tied_t = np.count_nonzero(dt == 0)
    denom = np.sqrt(float(n0 - tied_p) * float(n0 - tied_t))
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    s = float(np.sum(dp * dt))
    return float(np.clip(s / denom, -1.0, 1.0))


def system_aggregate(
    pred_by_utt: Mapping[str, float],
    true_by_utt: Mapping[str, float],
    system_of_utt: Mapping[str, str],
) -> tuple[dict[str, float], dict[str, float]]:
    """Per-system means of predicted and true scores, systems in first-seen order."""
    pred_sums: dict[str, list[float]] = {}
    true_sums: dict[str, list[float]] = {}
    for utt, t in true_by_utt.items():
        if utt not in system_of_utt:
            raise MetricError(f"utterance {utt!r} has no system id")
        if utt not in pred_by_utt:
            raise MetricError(f"utterance {utt!r} has no prediction")
        sys_id = system_of_utt[utt]
        pred_sums.setdefault(sys_id, []).append(pred_by_utt[utt])
        true_sums.setdefault(sys_id, []).append(t)
    pred_sys = {s: float(np.mean(v)) for s, v in pred_sums.items()}
    true_sys = {s: float(np.mean(v)) for s, v in true_sums.items()}
    return pred_sys, true_sys


def all_metrics(pred, true) -> dict[str, float]:
    return {name: float(fn(pred, true)) for name, fn in zip(METRIC_NAMES, (mse, lcc, srcc, ktau))}


@dataclass(frozen=True)
class MetricReport:
    utterance: dict
    system: dict
    n_utterances: int
    n_systems: int

    def as_lines(self) -> list[str]:
        """``level.metric=value`` lines, stable order."""
        lines = [f"n_utterances={self.n_utterances}", f"n_systems={self.n_systems}"]
        for level, values in (("utterance", self.utterance), ("system", self.system)):
            lines += [f"{level}.{m}={values[m]:.6f}" for m in METRIC_NAMES]
        return lines

    def as_table(self) -> str:
        head = f"{'level':<10}" + "".join(f"{m.upper():>10}" for m in METRIC_NAMES)
        rows = [head]
        for level, values in (("utterance", self.utterance), ("system", self.system)):
            rows.append(f"{level:<10}" + "".join(f"{values[m]:>10.4f}" for m in METRIC_NAMES))
        return "\n".join(rows)


def metric_report(
    pred_by_utt: Mapping[str, float],
    true_by_utt: Mapping[str, float],
    system_of_utt: Mapping[str, str],
) -> MetricReport:
    missing = [u for u in true_by_utt if u not in pred_by_utt]
    if missing:
        raise CoverageError(missing)
    ids = list(true_by_utt)
    p = [pred_by_utt[u] for u in ids]
    t = [true_by_utt[u] for u in ids]
    ps, ts = system_aggregate(pred_by_utt, true_by_utt, system_of_utt)
    systems = list(ts)
    return MetricReport(
        utterance=all_metrics(p, t),
        system=all_metrics([ps[s] for s in systems], [ts[s] for s in systems]),
        n_utterances=len(ids),
        n_systems=len(systems),
    )


def evaluate(pred_csv, ratings_csv) -> MetricReport:
    """Score a predictions CSV against the mean listener scores of a ratings CSV."""
    from .dataset import load_dataset, mean_listener_targets, read_predictions

    ds = load_dataset(ratings_csv, ".", split="eval")
    preds = read_predictions(pred_csv)
    return metric_report(preds, mean_listener_targets(ds), ds.system_of())
