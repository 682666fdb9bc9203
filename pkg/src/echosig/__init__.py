"""Blind acoustic environment signatures for audio authentication and splice detection."""

from ._validation import DegenerateSignatureError, EchoSigError, InputError, NumericalError
from .audio_io import AudioBuffer, SegmentPlan, load_wav, plan_segments, save_wav, synth_speech
from .clean_model import CleanSpeechModel
from .detector import (DetectionReport, GroundTruth, RocCurve, SpliceDetector, authenticate,
                       classify, evaluate, refine, roc, splice_scores)
from .room_sim import (RoomSpec, Rir, add_noise_snr, forge, image_source_rir, reverberate,
                       sample_room)
from .signature import EnvSignature, SignatureEstimator, estimate_signature, ncc
from .spectral import RastaMfcc, StftConfig, stft
from .stat_fit import (EvdParams, FitReport, GgdParams, ThresholdEstimator, ThresholdSpec,
                       evd_fit_mle, fit_report, fpr, fnr, ggd_fit_moments, optimal_threshold,
                       threshold_for_fpr)

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "CleanSpeechModel", "DegenerateSignatureError", "DetectionReport",
    "EchoSigError", "EnvSignature", "EvdParams", "FitReport", "GgdParams", "GroundTruth",
    "InputError", "NumericalError", "RastaMfcc", "Rir", "RocCurve", "RoomSpec", "SegmentPlan",
    "SignatureEstimator", "SpliceDetector", "StftConfig", "ThresholdEstimator", "ThresholdSpec",
    "add_noise_snr", "authenticate", "classify", "estimate_signature", "evaluate",
    "evd_fit_mle", "fit_report", "fnr", "forge", "fpr", "ggd_fit_moments", "image_source_rir",
    "load_wav", "ncc", "optimal_threshold", "plan_segments", "refine", "reverberate", "roc",
    "sample_room", "save_wav", "splice_scores", "stft", "synth_speech", "threshold_for_fpr",
]
