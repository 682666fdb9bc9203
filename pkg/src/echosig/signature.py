"""Environmental signature estimation and comparison."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import DegenerateSignatureError, InputError
from .audio_io import AudioBuffer
from .spectral import StftGrid, log_magnitude, mfcc, rasta_filter, stft

FORMAT_VERSION = 1


@dataclass(frozen=True)
class EnvSignature:
    """Average log-magnitude channel response of one analysis segment."""

    values: np.ndarray
    frames_used: int
    segment_bounds: tuple | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).copy()
        if vals.ndim != 1 or not np.all(np.isfinite(vals)):
            raise InputError("signature values must be a finite 1-D vector")
        if self.frames_used < 1:
            raise InputError("signature needs at least one frame")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def n_bins(self):
        return self.values.size

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "K": self.n_bins,
            "values": self.values.tolist(),
            "frames_used": int(self.frames_used),
            "bounds": list(self.segment_bounds) if self.segment_bounds is not None else None,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            values = doc["values"]
            if doc.get("K", len(values)) != len(values):
                raise InputError("signature K does not match the number of values")
            bounds = doc.get("bounds")
            return cls(np.array(values, dtype=np.float64), int(doc["frames_used"]),
                       tuple(bounds) if bounds is not None else None)
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed signature document: {exc!r}") from exc

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError as exc:
            raise InputError(f"signature file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: not valid JSON ({exc})") from exc


def signature_from_spectra(observed_log, clean_log):
    """Frame average of ``observed_log - clean_log`` (both K x L)."""
    observed_log = np.asarray(observed_log, dtype=np.float64)
    clean_log = np.asarray(clean_log, dtype=np.float64)
    if observed_log.shape != clean_log.shape:
        raise InputError(f"shape mismatch {observed_log.shape} vs {clean_log.shape}")
    return np.mean(observed_log - clean_log, axis=1)


def estimate_signature(segment, model=None, clean_log_spectrum=None, bounds=None):
    """Estimate the environmental signature of one segment.

    Parameters
    ----------
    segment : AudioBuffer or StftGrid
        Observed audio, or its precomputed STFT.
    model : CleanSpeechModel, optional
        Supplies the clean-spectrum reconstruction. Required unless
        `clean_log_spectrum` is given.
    clean_log_spectrum : array (K, L), optional
        Oracle mode: the true clean log magnitude replaces the model estimate.
    bounds : (start, end), optional
        Sample bounds recorded in the result.

    Raises
    ------
    DegenerateSignatureError
        If the segment is silent.
    """
    if isinstance(segment, StftGrid):
        grid = segment
    else:
        if model is None and clean_log_spectrum is None:
            raise InputError("need a clean-speech model or an oracle clean spectrum")
        if model is not None:
            cfg = model.featurizer.stft_config
        else:
            cfg = _config_for(clean_log_spectrum)
        grid = stft(segment, cfg)
    if not np.any(grid.coefficients):
        raise DegenerateSignatureError("silent segment carries no channel evidence")
    observed = log_magnitude(grid)
    if clean_log_spectrum is None:
        if model is None:
            raise InputError("need a clean-speech model or an oracle clean spectrum")
        feats = rasta_filter(mfcc(grid, model.n_mels, model.n_coeffs), model.rasta_pole)
        clean_log_spectrum = model.estimate_clean_spectrum(feats)
    values = signature_from_spectra(observed, clean_log_spectrum)
    return EnvSignature(values, observed.shape[1], bounds)


def _config_for(clean_log_spectrum):
    from .spectral import StftConfig

    k = np.asarray(clean_log_spectrum).shape[0]
    frame = 2 * (k - 1)
    return StftConfig(frame, frame // 2)


def _as_vector(x):
    return x.values if isinstance(x, EnvSignature) else np.asarray(x, dtype=np.float64)


def ncc(a, b):
    """Normalized cross-correlation coefficient of two signatures."""
    a = _as_vector(a)
    b = _as_vector(b)
    if a.shape != b.shape:
        raise InputError(f"signature lengths differ: {a.shape} vs {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    va = np.dot(da, da)
    vb = np.dot(db, db)
    if va / a.size <= 1e-20 or vb / b.size <= 1e-20:
        raise DegenerateSignatureError("zero-variance signature")
    rho = np.dot(da, db) / (np.sqrt(va) * np.sqrt(vb))
    return float(np.clip(rho, -1.0, 1.0))


def ncc_matrix(A, B=None):
    """Pairwise NCC between rows of `A` and rows of `B` (default: `A`)."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=np.float64))
    za = A - A.mean(axis=1, keepdims=True)
    zb = B - B.mean(axis=1, keepdims=True)
    na = np.linalg.norm(za, axis=1)
    nb = np.linalg.norm(zb, axis=1)
    if np.any(na ** 2 / A.shape[1] <= 1e-20) or np.any(nb ** 2 / B.shape[1] <= 1e-20):
        raise DegenerateSignatureError("zero-variance signature")
    return np.clip((za / na[:, None]) @ (zb / nb[:, None]).T, -1.0, 1.0)


class SignatureEstimator(TransformerMixin, BaseEstimator):
    """Map audio segments to environmental signatures (one row per segment).

    Parameters
    ----------
    model : CleanSpeechModel
        A fitted clean-speech model.
    """

    def __init__(self, model=None):
        self.model = model

    def fit(self, X=None, y=None):
        if self.model is None or not hasattr(self.model, "prototypes_"):
            raise InputError("SignatureEstimator needs a fitted CleanSpeechModel")
        self.n_bins_ = self.model.n_bins_
        return self

    def transform(self, X):
        """Stack of signature vectors, shape (n_segments, n_bins)."""
        return np.vstack([estimate_signature(seg, self.model).values for seg in X])

    def estimate(self, segment, bounds=None):
        return estimate_signature(segment, self.model, bounds=bounds)


__all__ = [
    "EnvSignature", "SignatureEstimator", "estimate_signature",
    "ncc", "ncc_matrix", "signature_from_spectra",
]
