"""Source authentication, splice detection/localization and evaluation."""

from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import DegenerateSignatureError, InputError, check_fraction
from .audio_io import plan_segments
from .signature import estimate_signature, ncc

FORMAT_VERSION = 1
ORIGINAL, SPLICED = "original", "spliced"


@dataclass(frozen=True)
class GroundTruth:
    """Labelled sample regions tiling a recording."""

    sample_rate_hz: int
    regions: list = field(default_factory=list)  # (start, end, label)

    def __post_init__(self):
        regions = [(int(s), int(e), str(lab)) for s, e, lab in self.regions]
        pos = 0
        for s, e, lab in regions:
            if s != pos or e < s:
                raise InputError(f"truth regions must be ordered and contiguous; bad region {(s, e, lab)}")
            if lab not in (ORIGINAL, SPLICED):
                raise InputError(f"unknown region label {lab!r}")
            pos = e
        object.__setattr__(self, "regions", regions)

    @property
    def n_samples(self):
        return self.regions[-1][1] if self.regions else 0

    def spliced_fraction(self, start, end):
        covered = 0
        for s, e, lab in self.regions:
            if lab == SPLICED:
                covered += max(0, min(e, end) - max(s, start))
        return covered / max(1, end - start)

    def segment_label(self, start, end):
        """1 when more than half of the segment's samples are spliced."""
        return int(self.spliced_fraction(start, end) > 0.5)

    def to_dict(self):
        return {"format_version": FORMAT_VERSION, "sample_rate_hz": self.sample_rate_hz,
                "regions": [{"start_sample": s, "end_sample": e, "label": lab}
                            for s, e, lab in self.regions]}

    @classmethod
    def from_dict(cls, doc):
        try:
            regions = [(r["start_sample"], r["end_sample"], r["label"]) for r in doc["regions"]]
            return cls(int(doc["sample_rate_hz"]), regions)
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed ground-truth document: {exc!r}") from exc

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class SegmentRecord:
    index: int
    start: int
    end: int
    rho: float | None
    p: int
    q: int
    skipped: bool = False


@dataclass(frozen=True)
class DetectionReport:
    segments: list
    threshold: float
    first_below: int | None   # 1-based index of the first score under the threshold
    sample_rate_hz: int
    config: dict

    @property
    def q(self):
        return np.array([s.q for s in self.segments], dtype=int)

    @property
    def p(self):
        return np.array([s.p for s in self.segments], dtype=int)

    @property
    def scores(self):
        return np.array([np.nan if s.rho is None else s.rho for s in self.segments])

    def to_dict(self):
        return {"format_version": FORMAT_VERSION, "threshold": self.threshold,
                "M_T": self.first_below, "sample_rate_hz": self.sample_rate_hz,
                "config": self.config, "segments": [asdict(s) for s in self.segments]}

    @classmethod
    def from_dict(cls, doc):
        try:
            segs = [SegmentRecord(**s) for s in doc["segments"]]
            return cls(segs, float(doc["threshold"]), doc.get("M_T"),
                       int(doc["sample_rate_hz"]), dict(doc.get("config", {})))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed report document: {exc!r}") from exc

    def csv_rows(self):
        yield "index,start,end,rho,p,q"
        for s in self.segments:
            rho = "" if s.rho is None else repr(s.rho)
            yield f"{s.index},{s.start},{s.end},{rho},{s.p},{s.q}"


# -- decision rules ---------------------------------------------------------

def authenticate(query_sig, reference_sig, T):
    """Return ``("forged" | "as-claimed", rho)``; forged iff rho < T."""
    rho = ncc(query_sig, reference_sig)
    return ("forged" if rho < T else "as-claimed"), rho


def splice_scores(signatures, T, exclude_self=False):
    """Running-reference correlation scores for consecutive segments.

    Until a score first drops below `T`, segment ``i`` is compared with all
    segments ``1..i`` (itself included) and the correlations averaged. The
    index of that first low score, ``M_T``, freezes the reference set: later
    segments are averaged against ``1..M_T``. With ``exclude_self=True`` the
    self term and the ``M_T``-th segment are left out of the averages.

    Parameters
    ----------
    signatures : sequence of EnvSignature, arrays or None
        ``None`` marks a skipped segment; it gets no score and is never used
        as a reference.
    T : float

    Returns
    -------
    scores : list of float or None
    first_below : int or None
        1-based position of ``M_T`` in the input sequence.
    """
    usable = [i for i, s in enumerate(signatures) if s is not None]
    if len(usable) < 2:
        raise InputError("need at least two usable segments")
    vecs = [signatures[i] for i in usable]
    scores = [None] * len(signatures)
    scores[usable[0]] = 1.0
    m_t = None
    for pos in range(1, len(vecs)):
        if m_t is None:
            refs = range(pos) if exclude_self else range(pos + 1)
        else:
            refs = range(m_t - 1) if exclude_self else range(m_t)
        rho = float(np.mean([ncc(vecs[j], vecs[pos]) for j in refs]))
        scores[usable[pos]] = rho
        if m_t is None and rho < T:
            m_t = pos + 1
    first_below = usable[m_t - 1] + 1 if m_t is not None else None
    return scores, first_below


def classify(scores, T):
    """1 where the score is below `T` (skipped segments stay 0)."""
    return np.array([0 if s is None or np.isnan(s) else int(s < T) for s in scores], dtype=int)


def refine(p, window=5, rs=0.8):
    """Keep a suspect only if more than `rs` of its neighbours are suspects too.

    The window of `window` segments is centred on each suspect and clipped at
    the sequence ends; the ratio divides by the neighbours actually present.
    """
    p = np.asarray(p, dtype=int)
    if window < 3 or window % 2 == 0:
        raise InputError(f"window must be odd and >= 3, got {window}")
    check_fraction(rs, "rs", closed_low=False, closed_high=False)
    half = window // 2
    q = np.zeros_like(p)
    for i in np.flatnonzero(p):
        lo, hi = max(0, i - half), min(p.size, i + half + 1)
        n_neigh = hi - lo - 1
        if n_neigh > 0 and (p[lo:hi].sum() - p[i]) / n_neigh > rs:
            q[i] = 1
    return q


# -- evaluation -------------------------------------------------------------

def evaluate(report, truth):
    """Segment-level accuracy, TPR, FPR and FNR of the refined labels."""
    if report.sample_rate_hz != truth.sample_rate_hz:
        raise InputError("report and ground truth sample rates differ")
    tp = fp = tn = fn = 0
    for seg in report.segments:
        if seg.skipped:
            continue
        label = truth.segment_label(seg.start, seg.end)
        if label and seg.q:
            tp += 1
        elif label:
            fn += 1
        elif seg.q:
            fp += 1
        else:
            tn += 1
    total = tp + fp + tn + fn
    if total == 0:
        raise InputError("report has no scored segments")
    return {
        "accuracy": (tp + tn) / total,
        "tpr": tp / (tp + fn) if tp + fn else float("nan"),
        "fpr": fp / (fp + tn) if fp + tn else float("nan"),
        "fnr": fn / (tp + fn) if tp + fn else float("nan"),
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
    }


@dataclass(frozen=True)
class RocCurve:
    points: list  # (threshold, fpr, tpr), threshold descending

    @property
    def auc(self):
        pts = np.array(sorted((f, t) for _, f, t in self.points))
        return float(np.trapezoid(pts[:, 1], pts[:, 0]))

    def tpr_at_fpr(self, max_fpr):
        """Best TPR among operating points with FPR <= `max_fpr`."""
        ok = [t for _, f, t in self.points if f <= max_fpr + 1e-12]
        return max(ok) if ok else 0.0

    def csv_rows(self):
        yield "threshold,fpr,tpr"
        for th, f, t in self.points:
            yield f"{th!r},{f!r},{t!r}"


def roc(scores, labels):
    """ROC of the rule "forged when score < T" for labels 1 = spliced."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    keep = ~np.isnan(scores)
    scores, labels = scores[keep], labels[keep]
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise InputError("ROC needs at least one item of each class")
    top = np.nextafter(max(1.0, scores.max()), np.inf)
    thresholds = np.unique(np.concatenate([[-1.0, top], scores]))[::-1]
    points = []
    for th in thresholds:
        flagged = scores < th
        points.append((float(th), float(np.sum(flagged & (labels == 0)) / n_neg),
                       float(np.sum(flagged & (labels == 1)) / n_pos)))
    return RocCurve(points)


# -- estimator --------------------------------------------------------------

def _n_threads():
    try:
        return max(1, int(os.environ.get("ECHO_SIG_THREADS", "1")))
    except ValueError:
        return 1


class SpliceDetector(BaseEstimator):
    """Detect and localize segments recorded in a different environment.

    Parameters
    ----------
    model : CleanSpeechModel
    threshold : float
        Decision threshold on averaged correlation scores. Required; obtain
        it from :class:`~echosig.stat_fit.ThresholdEstimator` or by hand.
    segment_len_s : float, default=3.0
    overlap : float, default=0.5
    window : int, default=5
        Refinement window (odd).
    rs : float, default=0.8
        Neighbour-agreement ratio a suspect must exceed to be kept.
    exclude_self : bool, default=False
        Use the self-excluding running average instead of the literal one.
    """

    def __init__(self, model=None, threshold=None, segment_len_s=3.0, overlap=0.5,
                 window=5, rs=0.8, exclude_self=False):
        self.model = model
        self.threshold = threshold
        self.segment_len_s = segment_len_s
        self.overlap = overlap
        self.window = window
        self.rs = rs
        self.exclude_self = exclude_self

    def fit(self, X=None, y=None):
        if self.model is None or not hasattr(self.model, "prototypes_"):
            raise InputError("SpliceDetector needs a fitted CleanSpeechModel")
        if self.threshold is None or not np.isfinite(self.threshold):
            raise InputError("SpliceDetector needs an explicit threshold")
        if self.window < 3 or self.window % 2 == 0:
            raise InputError(f"window must be odd and >= 3, got {self.window}")
        check_fraction(self.rs, "rs", closed_low=False, closed_high=False)
        if self.segment_len_s < 0.5:
            warnings.warn(f"segment length {self.segment_len_s} s is below 0.5 s; detection and "
                          "localization degrade quickly at this scale", stacklevel=2)
        return self

    def _signature(self, audio, bounds):
        try:
            return estimate_signature(audio.slice(*bounds), self.model, bounds=bounds)
        except DegenerateSignatureError:
            return None

    def signatures(self, audio):
        """Per-segment signatures (``None`` for skipped silent segments) and bounds."""
        plan = plan_segments(audio, self.segment_len_s, self.overlap,
                             min_len=self.model.frame_len)
        threads = _n_threads()
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                sigs = list(pool.map(lambda b: self._signature(audio, b), plan.boundaries))
        else:
            sigs = [self._signature(audio, b) for b in plan.boundaries]
        return sigs, plan.boundaries

    def detect(self, audio):
        """Run the full raw-detection and refinement pass; returns a DetectionReport."""
        self.fit()
        sigs, bounds = self.signatures(audio)
        if sum(s is not None for s in sigs) < 2:
            raise InputError("audio yields fewer than two usable segments")
        scores, first_below = splice_scores(sigs, self.threshold, self.exclude_self)
        p = classify(scores, self.threshold)
        q = refine(p, self.window, self.rs)
        records = [SegmentRecord(i + 1, b[0], b[1], scores[i], int(p[i]), int(q[i]), sigs[i] is None)
                   for i, b in enumerate(bounds)]
        config = {"segment_len_s": self.segment_len_s, "overlap": self.overlap,
                  "window": self.window, "rs": self.rs,
                  "strict_paper": not self.exclude_self}
        return DetectionReport(records, float(self.threshold), first_below,
                               audio.sample_rate_hz, config)

    def predict(self, audio):
        """Refined per-segment splice flags."""
        return self.detect(audio).q
