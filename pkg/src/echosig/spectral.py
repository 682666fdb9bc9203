"""STFT analysis, log spectra and RASTA-filtered mel cepstra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import lfilter
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import InputError

MAG_FLOOR = 1e-10
LOG_FLOOR = np.log(MAG_FLOOR)


@dataclass(frozen=True)
class StftConfig:
    frame_len_samples: int = 2048
    hop_samples: int = 1024
    fft_size: int | None = None

    def __post_init__(self):
        if self.fft_size is None:
            object.__setattr__(self, "fft_size", self.frame_len_samples)
        if not 0 < self.hop_samples <= self.frame_len_samples:
            raise InputError("need 0 < hop_samples <= frame_len_samples")
        if self.fft_size < self.frame_len_samples:
            raise InputError("fft_size must be >= frame_len_samples")

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples):
        if n_samples < self.frame_len_samples:
            return 0
        return (n_samples - self.frame_len_samples) // self.hop_samples + 1

    @classmethod
    def from_ms(cls, frame_ms=128.0, hop_fraction=0.5, sample_rate_hz=16000):
        frame = int(round(frame_ms * 1e-3 * sample_rate_hz))
        return cls(frame, max(1, int(round(frame * hop_fraction))))


@dataclass(frozen=True)
class StftGrid:
    coefficients: np.ndarray  # (K, L) complex
    config: StftConfig
    sample_rate_hz: int

    @property
    def shape(self):
        return self.coefficients.shape


def _frames(x, config):
    n_frames = config.n_frames(x.size)
    if n_frames == 0:
        raise InputError(
            f"signal of {x.size} samples is shorter than one frame "
            f"({config.frame_len_samples})"
        )
    idx = (np.arange(config.frame_len_samples)[None, :]
           + config.hop_samples * np.arange(n_frames)[:, None])
    return x[idx]


def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(buffer, config=StftConfig()):
    """Hann-windowed STFT over fully contained frames; returns a K x L grid."""
    x = np.asarray(getattr(buffer, "samples", buffer), dtype=np.float64)
    fs = getattr(buffer, "sample_rate_hz", 16000)
    frames = _frames(x, config) * hann(config.frame_len_samples)
    coeffs = rfft(frames, n=config.fft_size, axis=1).T
    return StftGrid(np.ascontiguousarray(coeffs), config, fs)


def log_magnitude(grid):
    """Natural log of floored magnitudes, elementwise."""
    coeffs = getattr(grid, "coefficients", grid)
    return np.log(np.maximum(np.abs(coeffs), MAG_FLOOR))


def mean_subtract(log_spec):
    """Remove the across-frequency mean of every frame (column)."""
    log_spec = np.asarray(log_spec, dtype=np.float64)
    return log_spec - log_spec.mean(axis=0, keepdims=True)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels, fft_size, sample_rate_hz):
    """Triangular filters evenly spaced on the mel scale from 0 Hz to Nyquist.

    Returns an array of shape (n_mels, fft_size // 2 + 1).
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate_hz / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc(grid, n_mels=26, n_coeffs=12):
    """Mel cepstra per frame, coefficients 1..n_coeffs (c0 excluded).

    Returns an (n_coeffs, L) array.
    """
    if n_mels < n_coeffs + 1:
        raise InputError(f"n_mels={n_mels} must be at least n_coeffs+1={n_coeffs + 1}")
    coeffs = grid.coefficients
    fb = mel_filterbank(n_mels, grid.config.fft_size, grid.sample_rate_hz)
    energies = fb @ (np.abs(coeffs) ** 2)
    log_e = np.log(np.maximum(energies, MAG_FLOOR ** 2))
    return dct(log_e, type=2, norm="ortho", axis=0)[1:n_coeffs + 1]


def rasta_filter(cepstra, pole=0.94):
    """RASTA band-pass along time for every cepstral trajectory.

    H(z) = 0.1 (2 + z^-1 - z^-3 - 2 z^-4) / (1 - pole z^-1), zero initial state.
    """
    cepstra = np.asarray(cepstra, dtype=np.float64)
    if cepstra.ndim != 2 or cepstra.shape[1] < 1:
        raise InputError("cepstra must be an (n_coeffs, L) array with L >= 1")
    numer = 0.1 * np.array([2.0, 1.0, 0.0, -1.0, -2.0])
    return lfilter(numer, [1.0, -pole], cepstra, axis=1)


class RastaMfcc(TransformerMixin, BaseEstimator):
    """Turn an audio buffer into (log spectrum, RASTA-MFCC) matrices.

    Stateless; ``fit`` only validates the parameters.

    Parameters
    ----------
    frame_len : int
        STFT frame length in samples (128 ms at 16 kHz by default).
    hop : int
        Frame advance in samples.
    n_mels, n_coeffs : int
        Mel filter count and number of retained cepstra.
    rasta_pole : float
        Pole of the RASTA integrator.
    """

    def __init__(self, frame_len=2048, hop=1024, n_mels=26, n_coeffs=12, rasta_pole=0.94):
        self.frame_len = frame_len
        self.hop = hop
        self.n_mels = n_mels
        self.n_coeffs = n_coeffs
        self.rasta_pole = rasta_pole

    @property
    def stft_config(self):
        return StftConfig(self.frame_len, self.hop)

    def fit(self, X=None, y=None):
        self.stft_config  # validates frame/hop
        if self.n_mels < self.n_coeffs + 1:
            raise InputError("n_mels must exceed n_coeffs")
        return self

    def analyze(self, buffer):
        """Return ``(log_spectrum K x L, cepstra N x L)`` for one buffer."""
        grid = stft(buffer, self.stft_config)
        feats = rasta_filter(mfcc(grid, self.n_mels, self.n_coeffs), self.rasta_pole)
        return log_magnitude(grid), feats

    def transform(self, X):
        """RASTA-MFCC features (frames as rows) for each buffer in `X`."""
        return [self.analyze(buf)[1].T for buf in X]

    def fingerprint(self):
        return {
            "stft": {"frame_len": self.frame_len, "hop": self.hop, "fft": self.frame_len},
            "mel": {"n_mels": self.n_mels, "n_coeffs": self.n_coeffs},
            "rasta": {"pole": self.rasta_pole},
        }
