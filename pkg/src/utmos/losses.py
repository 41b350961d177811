"""Pairwise contrastive margin loss, clipped MSE and their weighted sum.

All scores live in the normalized [-1, 1] space. The numpy functions are the
reference definitions; :func:`torch_combined_loss` is the differentiable
version used by the training loop and must agree with them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, MetricError


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    tau: float = 0.25
    beta: float = 1.0
    gamma: float = 0.5
    cross_domain_pairs: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.tau < 0 or self.beta < 0 or self.gamma < 0:
            raise ConfigurationError("alpha, tau, beta and gamma must be non-negative")
        if self.beta == 0 and self.gamma == 0:
            raise ConfigurationError("beta and gamma cannot both be zero")


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input")


def contrastive_pair(s1: float, s2: float, p1: float, p2: float, alpha: float) -> float:
    """Hinge on the mismatch between true and predicted score differences."""
    _check_finite(s1, s2, p1, p2)
    return max(0.0, abs((s1 - s2) - (p1 - p2)) - alpha)


def _pair_residuals(scores, preds) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    p = np.asarray(preds, dtype=np.float64)
    if s.shape != p.shape or s.ndim != 1:
        raise MetricError("scores and preds must be 1-D and equally long")
    if s.size < 2:
        raise MetricError("contrastive loss needs at least two utterances")
    _check_finite(s, p)
    e = s - p
    # (s_i - s_j) - (p_i - p_j) == e_i - e_j
    return e[:, None] - e[None, :]


def contrastive_batch(scores, preds, alpha: float, pair_mask=None) -> float:
    """Sum of :func:`contrastive_pair` over all ordered pairs i != j.

    ``pair_mask`` optionally restricts which (i, j) pairs contribute.
    """
    r = _pair_residuals(scores, preds)
    h = np.maximum(0.0, np.abs(r) - alpha)
    np.fill_diagonal(h, 0.0)
    if pair_mask is not None:
        h = h * np.asarray(pair_mask, dtype=np.float64)
    return float(h.sum())


def clipped_mse(y, yhat, tau: float):
    """Squared error, zeroed where the absolute error is at most ``tau``.

    Elementwise for array input.
    """
    e = np.asarray(y, dtype=np.float64) - np.asarray(yhat, dtype=np.float64)
    out = np.where(np.abs(e) > tau, e * e, 0.0)
    return float(out) if out.ndim == 0 else out


def combined_loss(scores, preds, cfg: LossConfig, pair_mask=None) -> float:
    """beta * mean clipped MSE + gamma * contrastive sum, utterance-level."""
    reg = float(np.mean(clipped_mse(scores, preds, cfg.tau)))
    con = contrastive_batch(scores, preds, cfg.alpha, pair_mask) if cfg.gamma else 0.0
    return cfg.beta * reg + cfg.gamma * con


def combined_loss_grad(scores, preds, cfg: LossConfig, pair_mask=None) -> np.ndarray:
    """Analytic gradient of :func:`combined_loss` with respect to ``preds``.

    Subgradient 0 is used at the hinge and clip kinks.
    """
    s = np.asarray(scores, dtype=np.float64)
    p = np.asarray(preds, dtype=np.float64)
    e = s - p
    reg_grad = np.where(np.abs(e) > cfg.tau, -2.0 * e, 0.0) / e.size
    r = _pair_residuals(s, p)
    active = (np.abs(r) > cfg.alpha).astype(np.float64)
    np.fill_diagonal(active, 0.0)
    if pair_mask is not None:
        active = active * np.asarray(pair_mask, dtype=np.float64)
    # d|r_ij|/dp_i = -sign(r_ij), d|r_ij|/dp_j = +sign(r_ij)
    g = active * np.sign(r)
    con_grad = -g.sum(axis=1) + g.sum(axis=0)
    return cfg.beta * reg_grad + cfg.gamma * con_grad


def _anchored_mean(x: np.ndarray) -> float:
    # shifting by the first element makes the mean of a constant array exact
    x = np.asarray(x, dtype=np.float64)
    return float(x[0] + np.mean(x - x[0]))


def frame_combined_loss(scores, frame_preds, cfg: LossConfig, pair_mask=None) -> float:
    """Frame-level variant: each utterance's target is replicated over its frames.

    The regression term averages clipped MSE over each utterance's frames and
    then over utterances; the contrastive term pairs frame-averaged scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    reg = np.mean([_anchored_mean(clipped_mse(np.full(len(f), s), f, cfg.tau)) for s, f in zip(scores, frame_preds)])
    utt = np.array([_anchored_mean(f) for f in frame_preds])
    con = contrastive_batch(scores, utt, cfg.alpha, pair_mask) if cfg.gamma else 0.0
    return cfg.beta * float(reg) + cfg.gamma * con


def torch_combined_loss(scores, frame_preds, lengths, cfg: LossConfig, pair_mask=None):
    """Differentiable frame-level loss for padded batches.

    ``frame_preds`` is [B, T] with padding beyond ``lengths``; ``scores`` is [B].
    """
    import torch

    B, T = frame_preds.shape
    mask = (torch.arange(T, device=frame_preds.device)[None, :] < lengths[:, None]).to(frame_preds.dtype)
    n = lengths.to(frame_preds.dtype)
    e = scores[:, None] - frame_preds
    sq = torch.where(e.abs() > cfg.tau, e * e, torch.zeros_like(e)) * mask
    reg = (sq.sum(dim=1) / n).mean()
    loss = cfg.beta * reg
    if cfg.gamma and B >= 2:
        utt = (frame_preds * mask).sum(dim=1) / n
        eu = scores - utt
        r = eu[:, None] - eu[None, :]
        h = torch.relu(r.abs() - cfg.alpha)
        h = h * (1.0 - torch.eye(B, dtype=h.dtype, device=h.device))
        if pair_mask is not None:
            h = h * pair_mask
        loss = loss + cfg.gamma * h.sum()
    return loss
