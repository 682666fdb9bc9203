"""Seeded synthetic experiments: corpus, rooms, forgeries, calibration and trials."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioBuffer, plan_segments, synth_speech
from .clean_model import CleanSpeechModel
from .detector import GroundTruth, SpliceDetector, evaluate
from .room_sim import add_noise_snr, forge, image_source_rir, reverberate, sample_room
from .signature import estimate_signature, ncc_matrix
from .stat_fit import fit_report


def child_seed(seed, *tags):
    """Independent 32-bit seed derived from `seed` and integer tags."""
    return int(np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(1)[0])


def synthetic_corpus(n_utterances=10, duration_s=30.0, seed=0):
    return [synth_speech(duration_s, child_seed(seed, 1, i)) for i in range(n_utterances)]


def train_synthetic_model(n_utterances=10, duration_s=30.0, n_mixtures=16, seed=0, **params):
    """Clean-speech model fitted on a seeded synthetic corpus."""
    corpus = synthetic_corpus(n_utterances, duration_s, seed)
    return CleanSpeechModel(n_mixtures=n_mixtures, seed=seed, **params).fit(corpus)


def room_pair(seed, t60_a=None, t60_b=None):
    """Two independently sampled rooms, optionally with forced T60 values."""
    rooms = []
    for tag, t60 in ((2, t60_a), (3, t60_b)):
        room = sample_room(child_seed(seed, tag))
        if t60 is not None:
            room = dataclasses.replace(room, t60=float(t60))
        rooms.append(room)
    return tuple(rooms)


def recording(speech_s, room, seed, tag, snr_db=None):
    """Synthetic speech reverberated in `room` with optional white noise."""
    dry = synth_speech(speech_s, child_seed(seed, tag, 0))
    wet, _ = reverberate(dry, image_source_rir(room))
    if snr_db is not None:
        wet = add_noise_snr(wet, snr_db, child_seed(seed, tag, 1))
    return wet


@dataclass
class Forgery:
    audio: AudioBuffer
    truth: GroundTruth
    rooms: tuple
    control: AudioBuffer  # same total length, host environment only


def make_forgery(seed, host_s=30.0, insert_s=15.0, snr_db=None, t60_a=None, t60_b=None,
                 position="middle"):
    """Host recorded in room A with a butt-spliced insert recorded in room B."""
    room_a, room_b = room_pair(seed, t60_a, t60_b)
    host = recording(host_s, room_a, seed, 4, snr_db)
    insert = recording(insert_s, room_b, seed, 5, snr_db)
    audio, truth = forge(host, insert, position)
    control = recording(host_s + insert_s, room_a, seed, 6, snr_db)
    return Forgery(audio, truth, (room_a, room_b), control)


def segment_signatures(audio, model, segment_len_s=3.0, overlap=0.5):
    plan = plan_segments(audio, segment_len_s, overlap, min_len=model.frame_len)
    return np.vstack([estimate_signature(audio.slice(a, b), model).values
                      for a, b in plan.boundaries])


def calibration_scores(model, seeds, segment_len_s=3.0, overlap=0.5, speech_s=30.0, snr_db=None):
    """Same-environment and cross-environment segment NCC scores.

    Each seed contributes one room pair; intra scores are the distinct
    segment pairs within each room, inter scores all cross pairs.
    """
    intra, inter = [], []
    for seed in seeds:
        room_a, room_b = room_pair(seed)
        sig_a = segment_signatures(recording(speech_s, room_a, seed, 7, snr_db), model,
                                   segment_len_s, overlap)
        sig_b = segment_signatures(recording(speech_s, room_b, seed, 8, snr_db), model,
                                   segment_len_s, overlap)
        for sig in (sig_a, sig_b):
            c = ncc_matrix(sig)
            intra.append(c[np.triu_indices(len(sig), 1)])
        inter.append(ncc_matrix(sig_a, sig_b).ravel())
    return np.concatenate(intra), np.concatenate(inter)


def calibrate_threshold(model, seeds, lam=0.5, **kwargs):
    """Fit both score laws on calibration scores; returns a FitReport."""
    intra, inter = calibration_scores(model, seeds, **kwargs)
    return fit_report(intra, inter, lam)


def run_trial(model, seed, threshold, segment_len_s=3.0, overlap=0.5, window=5, rs=0.8,
              exclude_self=False, snr_db=None, host_s=30.0, insert_s=15.0,
              t60_a=None, t60_b=None, position="middle", with_control=True):
    """Detect one seeded forgery and (optionally) its unspliced control.

    Returns a dict with the forgery, both reports and the metrics of each.
    """
    forgery = make_forgery(seed, host_s, insert_s, snr_db, t60_a, t60_b, position)
    det = SpliceDetector(model, threshold, segment_len_s, overlap, window, rs, exclude_self)
    report = det.detect(forgery.audio)
    labels = [forgery.truth.segment_label(s.start, s.end) for s in report.segments]
    out = {
        "forgery": forgery,
        "report": report,
        "labels": np.array(labels, dtype=int),
        "metrics": evaluate(report, forgery.truth),
    }
    if with_control:
        control_report = det.detect(forgery.control)
        control_truth = GroundTruth(forgery.control.sample_rate_hz,
                                    [(0, len(forgery.control), "original")])
        out["control_report"] = control_report
        out["control_metrics"] = evaluate(control_report, control_truth)
    return out
