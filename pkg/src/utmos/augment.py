"""Label-preserving augmentation: phase-vocoder speed change and pitch shift."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import resample

from .errors import ConfigurationError

N_FFT = 1024
HOP = 256


@dataclass(frozen=True)
class AugmentConfig:
    """``f_t`` bounds the tempo factor to [1 - f_t, 1 + f_t]; ``f_p`` bounds the
    pitch shift to [-f_p, f_p] cents.

    With ``on_the_fly`` every training example is freshly augmented; otherwise
    ``offline_copies`` augmented versions of each utterance are made once
    before training and mixed with the originals.
    """

    f_t: float = 0.1
    f_p: float = 300.0
    enabled: bool = True
    on_the_fly: bool = True
    offline_copies: int = 1

    def __post_init__(self):
        if not 0 <= self.f_t < 1:
            raise ConfigurationError("f_t must lie in [0, 1)")
        if self.f_p < 0:
            raise ConfigurationError("f_p must be non-negative")
        if self.offline_copies < 1:
            raise ConfigurationError("offline_copies must be at least 1")


def _window(n_fft: int) -> np.ndarray:
    return np.hanning(n_fft + 1)[:-1]


def stft(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Centered STFT, [n_fft // 2 + 1, n_frames]."""
    pad = n_fft // 2
    mode = "reflect" if x.size > pad else "constant"
    xp = np.pad(x, pad, mode=mode)
    if xp.size < n_fft:
        xp = np.pad(xp, (0, n_fft - xp.size))
    n_frames = 1 + (xp.size - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(xp[idx] * _window(n_fft), axis=1).T


def istft(S: np.ndarray, length: int, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`, trimmed or padded to ``length``."""
    win = _window(n_fft)
    frames = np.fft.irfft(S.T, n=n_fft, axis=1) * win
    n_frames = frames.shape[0]
    total = n_fft + hop * (n_frames - 1)
    idx = (np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]).ravel()
    y = np.bincount(idx, weights=frames.ravel(), minlength=total)
    wss = np.bincount(idx, weights=np.tile(win * win, n_frames), minlength=total)
    nz = wss > 1e-8
    y[nz] /= wss[nz]
    y = y[n_fft // 2:]
    if y.size >= length:
        return y[:length]
    return np.pad(y, (0, length - y.size))


def phase_vocoder(S: np.ndarray, rate: float, hop: int = HOP, n_fft: int = N_FFT) -> np.ndarray:
    """Resample STFT frames in time by ``rate`` keeping per-bin phase advance."""
    n_bins, n_frames = S.shape
    steps = np.arange(0, n_frames, rate)
    idx = steps.astype(int)
    frac = (steps - idx)[None, :]
    Sp = np.concatenate([S, np.zeros((n_bins, 2), dtype=complex)], axis=1)
    mags, angles = np.abs(Sp), np.angle(Sp)
    mag = (1.0 - frac) * mags[:, idx] + frac * mags[:, idx + 1]
    expected = (2.0 * np.pi * hop * np.arange(n_bins) / n_fft)[:, None]
    dphi = angles[:, idx + 1] - angles[:, idx] - expected
    dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
    # output frame k carries the initial phase plus the advances of frames < k
    advance = np.cumsum(expected + dphi, axis=1)
    phase = angles[:, :1] + np.concatenate([np.zeros((n_bins, 1)), advance[:, :-1]], axis=1)
    return mag * np.exp(1j * phase)


def change_speed(wave: np.ndarray, f_t: float) -> np.ndarray:
    """Time-stretch so the result lasts ``len(wave) / f_t`` samples, pitch unchanged."""
    if f_t <= 0:
        raise ValueError(f"speed factor must be positive, got {f_t}")
    wave = np.asarray(wave, dtype=np.float64)
    if wave.size == 0:
        raise ValueError("empty waveform")
    length = int(round(wave.size / f_t))
    return istft(phase_vocoder(stft(wave), f_t), length)


def shift_pitch(wave: np.ndarray, f_p: float) -> np.ndarray:
    """Shift pitch by ``f_p`` cents, keeping the duration."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.size == 0:
        raise ValueError("empty waveform")
    ratio = 2.0 ** (f_p / 1200.0)
    stretched = change_speed(wave, 1.0 / ratio)
    return resample(stretched, wave.size)


def sample_augmentation(cfg: AugmentConfig, rng: np.random.Generator) -> tuple[float, float]:
    f_t = float(rng.uniform(1.0 - cfg.f_t, 1.0 + cfg.f_t)) if cfg.f_t else 1.0
    f_p = float(rng.uniform(-cfg.f_p, cfg.f_p)) if cfg.f_p else 0.0
    return f_t, f_p


def augment(wave: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random speed change followed by random pitch shift. The MOS label is unchanged."""
    if not cfg.enabled:
        return np.asarray(wave, dtype=np.float64)
    f_t, f_p = sample_augmentation(cfg, rng)
    return shift_pitch(change_speed(wave, f_t), f_p)
