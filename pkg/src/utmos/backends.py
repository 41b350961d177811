"""Frame-level feature backends.

A backend turns a prepared 16 kHz waveform into a [T, D] feature matrix. The
package ships a deterministic toy backend (log mel-band energies pushed
through a fixed random projection); pretrained encoders plug in through
:class:`CallableBackend` and :func:`register_backend`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import SAMPLE_RATE
from .errors import ConfigurationError


@dataclass(frozen=True)
class FrameFeatures:
    utterance_id: str
    frames: np.ndarray  # [T, D]
    backend_id: str

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 2 or f.shape[0] < 1:
            raise ValueError(f"frames must be [T>=1, D], got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("non-finite features")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def mel_filterbank(n_bands: int, n_fft: int, sr: int = SAMPLE_RATE, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters on the mel scale, [n_bands, n_fft // 2 + 1]."""
    fmax = sr / 2 if fmax is None else fmax
    hz_to_mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)
    mel_to_hz = lambda m: 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))
    freqs = np.linspace(0, sr / 2, n_fft // 2 + 1)
    fb = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (freqs - lo) / max(mid - lo, 1e-9)
        falling = (hi - freqs) / max(hi - mid, 1e-9)
        fb[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


class ToyBackend:
    """Windowed log-mel statistics through a fixed random projection.

    Frames are centered with a 20 ms hop, so one second yields 51 frames.
    """

    def __init__(self, dim: int = 64, seed: int = 0, hop_ms: float = 20.0, win_ms: float = 25.0, n_bands: int = 40):
        self.dim = dim
        self.seed = seed
        self.hop = int(round(SAMPLE_RATE * hop_ms / 1000))
        self.win = int(round(SAMPLE_RATE * win_ms / 1000))
        self.n_fft = 1 << (self.win - 1).bit_length()
        self.n_bands = n_bands
        self._fb = mel_filterbank(n_bands, self.n_fft)
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((n_bands, dim)) / np.sqrt(n_bands)
        self._window = np.hanning(self.win + 1)[:-1]
        self.backend_id = f"toy:dim={dim},seed={seed}"

    def frame_count(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop

    def extract(self, wave: np.ndarray, utterance_id: str = "") -> FrameFeatures:
        x = np.asarray(wave, dtype=np.float64)
        pad = self.win // 2
        xp = np.pad(x, (pad, pad + self.win))
        n = self.frame_count(x.size)
        idx = np.arange(self.win)[None, :] + self.hop * np.arange(n)[:, None]
        spec = np.abs(np.fft.rfft(xp[idx] * self._window, n=self.n_fft, axis=1)) ** 2
        logmel = np.log10(spec @ self._fb.T + 1e-6)
        return FrameFeatures(utterance_id, logmel @ self._proj, self.backend_id)

    __call__ = extract


class CallableBackend:
    """Adapter for an external encoder ``fn(wave) -> [T, D] array``."""

    def __init__(self, backend_id: str, fn: Callable[[np.ndarray], np.ndarray], dim: int):
        self.backend_id = backend_id
        self.dim = dim
        self._fn = fn

    def extract(self, wave: np.ndarray, utterance_id: str = "") -> FrameFeatures:
        frames = np.asarray(self._fn(wave), dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != self.dim:
            raise ConfigurationError(f"backend {self.backend_id} returned shape {frames.shape}, expected [T, {self.dim}]")
        return FrameFeatures(utterance_id, frames, self.backend_id)

    __call__ = extract


_REGISTRY: dict[str, Callable[..., object]] = {"toy": ToyBackend}


def register_backend(name: str, factory: Callable[..., object]) -> None:
    _REGISTRY[name] = factory


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def get_backend(backend_id: str):
    """Build a backend from an id such as ``toy`` or ``toy:dim=48,seed=3``."""
    name, _, params = backend_id.partition(":")
    if name not in _REGISTRY:
        raise ConfigurationError(f"unknown backend {name!r}; registered: {sorted(_REGISTRY)}")
    kwargs = {}
    if params:
        for item in params.split(","):
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigurationError(f"malformed backend parameter {item!r} in {backend_id!r}")
            kwargs[key.strip()] = _coerce(value.strip())
    try:
        return _REGISTRY[name](**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for backend {name!r}: {exc}") from None


def backend_extract(wave: np.ndarray, backend="toy", utterance_id: str = "") -> FrameFeatures:
    if isinstance(backend, str):
        backend = get_backend(backend)
    return backend.extract(wave, utterance_id)
