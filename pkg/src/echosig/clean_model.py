"""Clean-speech GMM over RASTA-MFCCs and per-mixture log-spectrum prototypes."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.cluster import kmeans_plusplus
from sklearn.utils.validation import check_is_fitted

from ._validation import InputError, NumericalError, check_matrix
from .spectral import RastaMfcc, mean_subtract

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_LOG_2PI = np.log(2.0 * np.pi)


class EmptyMixtureError(NumericalError):
    """A mixture received (almost) no posterior mass; retrain the model."""


@dataclass
class GmmParams:
    weights: np.ndarray     # (M,)
    means: np.ndarray       # (M, N)
    variances: np.ndarray   # (M, N)
    log_likelihood_trace: list = field(default_factory=list)
    n_iter: int = 0


def _log_gaussians(X, means, variances):
    """log N(x_l | mu_m, diag var_m) for all frames and mixtures -> (L, M)."""
    prec = 1.0 / variances
    quad = ((X ** 2) @ prec.T
            - 2.0 * X @ (means * prec).T
            + np.sum(means ** 2 * prec, axis=1))
    return -0.5 * (X.shape[1] * _LOG_2PI + np.sum(np.log(variances), axis=1) + quad)


def _weighted_log_prob(X, params):
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    return _log_gaussians(X, params.means, params.variances) + log_w


def gmm_posteriors(X, params):
    """Mixture responsibilities (L, M) computed in the log domain."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    wlp = _weighted_log_prob(X, params)
    return np.exp(wlp - logsumexp(wlp, axis=1, keepdims=True))


def gmm_log_likelihood(X, params):
    """Total log-likelihood of the frames `X` under the mixture."""
    return float(np.sum(logsumexp(_weighted_log_prob(X, params), axis=1)))


def _m_step(X, resp, floor, old=None):
    nk = resp.sum(axis=0)
    alive = nk > 1e-10
    safe = np.where(alive, nk, 1.0)
    means = (resp.T @ X) / safe[:, None]
    variances = (resp.T @ (X ** 2)) / safe[:, None] - means ** 2
    variances = np.maximum(variances, floor)
    if old is not None and not alive.all():
        means[~alive] = old.means[~alive]
        variances[~alive] = old.variances[~alive]
    weights = nk / nk.sum()
    return GmmParams(weights, means, variances)


def train_gmm(features, n_mixtures, seed=0, max_iter=200, tol=1e-6, var_floor_ratio=1e-4):
    """Fit a diagonal-covariance GMM by EM.

    Means are seeded with k-means++; the initial responsibilities are the
    hard nearest-centre assignments. EM stops once the total log-likelihood
    gains less than ``tol * n_frames`` or after `max_iter` iterations.
    Each variance is floored at ``var_floor_ratio`` times the corpus
    variance of that dimension.

    Parameters
    ----------
    features : array of shape (n_frames, n_dims)
    n_mixtures : int
    seed : int

    Returns
    -------
    GmmParams
    """
    X = check_matrix(features, "features")
    n, d = X.shape
    if n < 10 * n_mixtures:
        raise InputError(f"need at least {10 * n_mixtures} frames for {n_mixtures} mixtures, got {n}")
    corpus_var = X.var(axis=0)
    if np.any(corpus_var <= 0.0):
        raise InputError("degenerate features: a dimension has zero variance")
    floor = var_floor_ratio * corpus_var

    centers, _ = kmeans_plusplus(X, n_mixtures, random_state=seed)
    d2 = (np.sum(X ** 2, axis=1)[:, None] - 2.0 * X @ centers.T
          + np.sum(centers ** 2, axis=1)[None, :])
    resp = np.zeros((n, n_mixtures))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    params = _m_step(X, resp, floor)
    empty = resp.sum(axis=0) == 0
    if empty.any():
        params.means[empty] = centers[empty]
        params.variances[empty] = corpus_var
        params.weights = np.full(n_mixtures, 1.0 / n_mixtures)

    trace = [gmm_log_likelihood(X, params)]
    for it in range(1, max_iter + 1):
        params = _m_step(X, gmm_posteriors(X, params), floor, old=params)
        trace.append(gmm_log_likelihood(X, params))
        if trace[-1] - trace[-2] < tol * n:
            break
    params.log_likelihood_trace = trace
    params.n_iter = it
    logger.info("GMM: %d mixtures, %d iterations, log-likelihood %.6g", n_mixtures, it, trace[-1])
    return params


def fit_prototypes(resp, clean_logspec):
    """Posterior-weighted average of mean-subtracted log spectra per mixture.

    Parameters
    ----------
    resp : array (L, M)
        Frame responsibilities.
    clean_logspec : array (K, L)
        Mean-subtracted clean log spectrum.

    Returns
    -------
    array (M, K)
    """
    resp = np.asarray(resp, dtype=np.float64)
    S = np.asarray(clean_logspec, dtype=np.float64)
    if resp.shape[0] != S.shape[1]:
        raise InputError(f"frame count mismatch: {resp.shape[0]} posteriors vs {S.shape[1]} spectra")
    mass = resp.sum(axis=0)
    empty = np.flatnonzero(mass < 1e-8)
    if empty.size:
        raise EmptyMixtureError(f"mixtures {empty.tolist()} own no frames; retrain the model")
    return (resp.T @ S.T) / mass[:, None]


class CleanSpeechModel(BaseEstimator):
    """Clean-speech prior used to reconstruct the dry log spectrum of a frame.

    ``fit`` takes a corpus of clean :class:`~echosig.audio_io.AudioBuffer`
    objects. Each utterance is analysed separately (so RASTA state does not
    leak across files), then frames are pooled to train the mixture and the
    per-mixture spectral prototypes.

    Parameters
    ----------
    n_mixtures : int, default=16
    seed : int, default=0
    max_iter : int, default=200
    tol : float, default=1e-6
        Per-frame log-likelihood gain below which EM stops.
    var_floor_ratio : float, default=1e-4
    frame_len, hop, n_mels, n_coeffs, rasta_pole
        Feature settings, see :class:`~echosig.spectral.RastaMfcc`.

    Attributes
    ----------
    weights_, means_, variances_ : ndarray
    prototypes_ : ndarray of shape (n_mixtures, n_bins)
    log_likelihood_trace_ : list of float
    n_frames_ : int
    """

    def __init__(self, n_mixtures=16, seed=0, max_iter=200, tol=1e-6, var_floor_ratio=1e-4,
                 frame_len=2048, hop=1024, n_mels=26, n_coeffs=12, rasta_pole=0.94):
        self.n_mixtures = n_mixtures
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor_ratio = var_floor_ratio
        self.frame_len = frame_len
        self.hop = hop
        self.n_mels = n_mels
        self.n_coeffs = n_coeffs
        self.rasta_pole = rasta_pole

    @property
    def featurizer(self):
        return RastaMfcc(self.frame_len, self.hop, self.n_mels, self.n_coeffs, self.rasta_pole)

    def fit(self, X, y=None):
        feat = self.featurizer.fit()
        cepstra, spectra = [], []
        for buf in X:
            log_spec, ceps = feat.analyze(buf)
            spectra.append(mean_subtract(log_spec))
            cepstra.append(ceps.T)
        if not cepstra:
            raise InputError("empty training corpus")
        features = np.vstack(cepstra)
        params = train_gmm(features, self.n_mixtures, self.seed, self.max_iter, self.tol,
                           self.var_floor_ratio)
        self._set_gmm(params)
        self.prototypes_ = fit_prototypes(gmm_posteriors(features, params), np.hstack(spectra))
        self.log_likelihood_trace_ = params.log_likelihood_trace
        self.n_iter_ = params.n_iter
        self.n_frames_ = features.shape[0]
        return self

    def _set_gmm(self, params):
        self.weights_ = params.weights
        self.means_ = params.means
        self.variances_ = params.variances

    @property
    def gmm_(self):
        check_is_fitted(self, "prototypes_")
        return GmmParams(self.weights_, self.means_, self.variances_)

    @property
    def n_bins_(self):
        return self.prototypes_.shape[1]

    def predict_proba(self, features):
        """Posterior mixture probabilities for frames given as rows."""
        return gmm_posteriors(features, self.gmm_)

    def score(self, features, y=None):
        """Average per-frame log-likelihood."""
        features = np.atleast_2d(features)
        return gmm_log_likelihood(features, self.gmm_) / features.shape[0]

    def estimate_clean_spectrum(self, cepstra):
        """Reconstructed clean log spectrum (K, L) from RASTA-MFCCs (N, L)."""
        cepstra = np.asarray(cepstra, dtype=np.float64)
        if cepstra.ndim != 2 or cepstra.shape[0] != self.means_.shape[1]:
            raise InputError(
                f"features have shape {cepstra.shape}, model expects "
                f"{self.means_.shape[1]} coefficients per frame"
            )
        return self.prototypes_.T @ self.predict_proba(cepstra.T).T

    def fingerprint(self):
        return self.featurizer.fingerprint()

    def check_compatible(self, other_fingerprint):
        if other_fingerprint != self.fingerprint():
            raise InputError(f"feature configuration mismatch: {other_fingerprint} vs model {self.fingerprint()}")

    # -- serialization -------------------------------------------------

    def to_dict(self):
        check_is_fitted(self, "prototypes_")
        doc = {"format_version": FORMAT_VERSION}
        doc.update(self.fingerprint())
        doc["gmm"] = {
            "weights": self.weights_.tolist(),
            "means": self.means_.tolist(),
            "variances": self.variances_.tolist(),
        }
        doc["prototypes"] = self.prototypes_.tolist()
        doc["training"] = {"seed": self.seed, "n_frames": int(self.n_frames_),
                           "n_iter": int(self.n_iter_),
                           "log_likelihood": self.log_likelihood_trace_[-1]}
        return doc

    @classmethod
    def from_dict(cls, doc):
        try:
            if doc["format_version"] != FORMAT_VERSION:
                raise InputError(f"unsupported model format_version {doc['format_version']}")
            gmm = doc["gmm"]
            model = cls(
                n_mixtures=len(gmm["weights"]),
                seed=doc.get("training", {}).get("seed", 0),
                frame_len=doc["stft"]["frame_len"], hop=doc["stft"]["hop"],
                n_mels=doc["mel"]["n_mels"], n_coeffs=doc["mel"]["n_coeffs"],
                rasta_pole=doc["rasta"]["pole"],
            )
            if doc["stft"].get("fft", model.frame_len) != model.frame_len:
                raise InputError("fft size different from frame length is not supported")
            model.weights_ = np.array(gmm["weights"], dtype=np.float64)
            model.means_ = np.array(gmm["means"], dtype=np.float64)
            model.variances_ = np.array(gmm["variances"], dtype=np.float64)
            model.prototypes_ = np.array(doc["prototypes"], dtype=np.float64)
            training = doc.get("training", {})
            model.n_frames_ = training.get("n_frames", 0)
            model.n_iter_ = training.get("n_iter", 0)
            model.log_likelihood_trace_ = [training.get("log_likelihood", float("nan"))]
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed model document: {exc!r}") from exc
        m = model.weights_.size
        if (model.means_.shape != (m, model.n_coeffs) or model.variances_.shape != model.means_.shape
                or model.prototypes_.shape != (m, model.frame_len // 2 + 1)):
            raise InputError("model arrays have inconsistent shapes")
        if abs(model.weights_.sum() - 1.0) > 1e-9 or np.any(model.variances_ <= 0):
            raise InputError("model weights or variances are invalid")
        return model

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise InputError(f"model file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc)


__all__ = [
    "CleanSpeechModel", "EmptyMixtureError", "GmmParams",
    "fit_prototypes", "gmm_log_likelihood", "gmm_posteriors", "train_gmm",
]
