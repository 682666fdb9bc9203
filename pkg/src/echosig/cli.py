"""Command-line interface: ``echosig <command> [options]``.

Exit codes: 0 on success, 2 for usage or input errors, 3 for numerical
failures. Errors are reported on standard error as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import experiments
from ._validation import EchoSigError, InputError, NumericalError
from .audio_io import load_wav, save_wav, synth_speech
from .clean_model import CleanSpeechModel
from .detector import (DetectionReport, GroundTruth, SpliceDetector, authenticate, evaluate,
                       roc)
from .room_sim import (RoomSpec, add_noise_snr, forge, image_source_rir, reverberate,
                       sample_room, save_rir)
from .signature import EnvSignature, estimate_signature
from .stat_fit import FitReport, fit_report, threshold_for_fpr

logger = logging.getLogger("echosig")


def _jsonable(obj):
    """Replace NaN (undefined rates) by null so output stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _emit(doc):
    print(json.dumps(_jsonable(doc), indent=2, allow_nan=False))


def _write_json(path, doc):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_jsonable(doc), indent=2, allow_nan=False), encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def _write_lines(path, lines):
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise InputError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc


def _read_scores(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise InputError(f"file not found: {path}") from exc
    values = []
    for n, line in enumerate(text.splitlines(), 1):
        field = line.split(",")[0].strip()
        if not field or field.startswith("#"):
            continue
        try:
            values.append(float(field))
        except ValueError:
            if n == 1:  # header
                continue
            raise InputError(f"{path}:{n}: not a number: {field!r}") from None
    return np.array(values)


def _resolve_threshold(args):
    if args.threshold is not None:
        return float(args.threshold)
    if args.fit is not None:
        fit = FitReport.from_dict(_read_json(args.fit))
        if getattr(args, "tau", None) is not None:
            return threshold_for_fpr(fit.evd, args.tau, fit.ggd).T
        return fit.threshold.T
    raise InputError("give --threshold or --fit")


def _load_signature(path, model):
    """A signature JSON file, or a WAV analysed with `model`."""
    if str(path).lower().endswith(".wav"):
        if model is None:
            raise InputError(f"{path}: estimating a signature from audio needs --model")
        return estimate_signature(load_wav(path), model)
    return EnvSignature.load(path)


# -- commands ---------------------------------------------------------------

def cmd_train(args):
    corpus_dir = Path(args.corpus)
    files = sorted(corpus_dir.glob("*.wav")) if corpus_dir.is_dir() else []
    if not files:
        raise InputError(f"no input files in {corpus_dir}")
    model = CleanSpeechModel(n_mixtures=args.mixtures, seed=args.seed, max_iter=args.max_iter)
    model.fit([load_wav(f) for f in files])
    model.save(args.out)
    _emit({"model": str(args.out), "files": len(files), "frames": int(model.n_frames_),
           "iterations": int(model.n_iter_),
           "log_likelihood": model.log_likelihood_trace_[-1]})


def cmd_synth(args):
    buf = synth_speech(args.duration, args.seed)
    save_wav(buf, args.out)
    _emit({"out": str(args.out), "duration_s": buf.duration_s, "seed": args.seed})


def cmd_estimate_signature(args):
    model = CleanSpeechModel.load(args.model)
    audio = load_wav(args.audio)
    start = int(round(args.start_s * audio.sample_rate_hz))
    end = len(audio) if args.end_s is None else int(round(args.end_s * audio.sample_rate_hz))
    if not 0 <= start < end <= len(audio):
        raise InputError(f"segment [{args.start_s}, {args.end_s}] s is outside the audio")
    sig = estimate_signature(audio.slice(start, end), model, bounds=(start, end))
    sig.save(args.out)
    _emit({"out": str(args.out), "K": sig.n_bins, "frames_used": sig.frames_used})


def cmd_authenticate(args):
    model = CleanSpeechModel.load(args.model) if args.model else None
    query = _load_signature(args.query, model)
    reference = _load_signature(args.reference, model)
    T = _resolve_threshold(args)
    decision, rho = authenticate(query, reference, T)
    _emit({"decision": decision, "rho": rho, "threshold": T})


def cmd_detect(args):
    model = CleanSpeechModel.load(args.model)
    audio = load_wav(args.audio)
    det = SpliceDetector(model, _resolve_threshold(args), args.segment_s, args.overlap,
                         args.window, args.rs, args.exclude_self)
    report = det.detect(audio)
    _write_json(args.out, report.to_dict())
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    _write_lines(csv_path, report.csv_rows())
    _emit({"report": str(args.out), "csv": csv_path, "segments": len(report.segments),
           "flagged": int(report.q.sum()), "M_T": report.first_below,
           "threshold": report.threshold})


def cmd_fit(args):
    fit = fit_report(_read_scores(args.intra), _read_scores(args.inter), args.lam)
    doc = fit.to_dict()
    if args.tau is not None:
        doc["fpr_constrained"] = threshold_for_fpr(fit.evd, args.tau, fit.ggd).to_dict()
    _write_json(args.out, doc)
    th = fit.threshold
    _emit({"fit": str(args.out), "lambda": fit.lam, "T": th.T, "fpr": th.achieved_fpr,
           "fnr": th.achieved_fnr, "combined_error": th.combined_error})


def _room_from_args(args):
    if args.spec_json:
        return RoomSpec.from_dict(_read_json(args.spec_json))
    return sample_room(args.seed)


def cmd_sim_rir(args):
    rir = image_source_rir(_room_from_args(args), fs=args.fs)
    sidecar = args.sidecar or str(Path(args.out).with_suffix(".json"))
    save_rir(rir, args.out, sidecar)
    _emit({"out": str(args.out), "sidecar": sidecar, "taps": int(rir.taps.size),
           "reflection": rir.reflection, "spec": rir.spec.to_dict()})


def cmd_reverb(args):
    speech = load_wav(args.audio)
    rir = image_source_rir(_room_from_args(args), fs=speech.sample_rate_hz)
    wet, scale = reverberate(speech, rir)
    if args.snr is not None:
        wet = add_noise_snr(wet, args.snr, args.noise_seed)
    clipped = save_wav(wet, args.out)
    _emit({"out": str(args.out), "scale": scale, "clipped": clipped, "snr_db": args.snr})


def cmd_forge(args):
    host = load_wav(args.host)
    insert = load_wav(args.insert)
    at = args.at if args.at == "middle" else int(args.at)
    audio, truth = forge(host, insert, at)
    save_wav(audio, args.out)
    truth.save(args.truth_out)
    _emit({"out": str(args.out), "truth": str(args.truth_out), "regions": truth.to_dict()["regions"]})


def cmd_evaluate(args):
    report = DetectionReport.from_dict(_read_json(args.report))
    truth = GroundTruth.from_dict(_read_json(args.truth))
    metrics = evaluate(report, truth)
    if args.roc_out:
        scored = [s for s in report.segments if not s.skipped]
        curve = roc([s.rho for s in scored], [truth.segment_label(s.start, s.end) for s in scored])
        _write_lines(args.roc_out, curve.csv_rows())
        metrics["auc"] = curve.auc
    _emit(metrics)


def cmd_pipeline(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.model:
        model = CleanSpeechModel.load(args.model)
    else:
        model = experiments.train_synthetic_model(args.corpus_size, 30.0, args.mixtures, args.seed)
        model.save(out / "model.json")
    if args.threshold is not None:
        T, fit_doc = float(args.threshold), None
    else:
        seeds = [experiments.child_seed(args.seed, 9, i) for i in range(args.calibration_rooms)]
        fit = experiments.calibrate_threshold(model, seeds, args.lam,
                                              segment_len_s=args.segment_s, overlap=args.overlap,
                                              snr_db=args.snr)
        T, fit_doc = fit.threshold.T, fit.to_dict()
        _write_json(out / "fit.json", fit_doc)
    trial = experiments.run_trial(model, args.seed, T, args.segment_s, args.overlap, args.window,
                                  args.rs, args.exclude_self, args.snr, args.host_s,
                                  args.insert_s, args.t60_a, args.t60_b)
    forgery, report = trial["forgery"], trial["report"]
    save_wav(forgery.audio, out / "forged.wav")
    forgery.truth.save(out / "truth.json")
    _write_json(out / "report.json", report.to_dict())
    _write_lines(out / "report.csv", report.csv_rows())
    scored = [(s.rho, lab) for s, lab in zip(report.segments, trial["labels"]) if not s.skipped]
    metrics = dict(trial["metrics"])
    try:
        curve = roc(*zip(*scored))
        _write_lines(out / "roc.csv", curve.csv_rows())
        metrics["auc"] = curve.auc
    except InputError:
        metrics["auc"] = None
    metrics.update({
        "seed": args.seed, "threshold": T, "lambda": args.lam,
        "threshold_source": "given" if fit_doc is None else "calibrated",
        "snr_db": args.snr, "segment_s": args.segment_s, "window": args.window, "rs": args.rs,
        "rooms": [r.to_dict() for r in forgery.rooms],
        "control": trial["control_metrics"],
    })
    _write_json(out / "metrics.json", metrics)
    _emit(metrics)


# -- parser -----------------------------------------------------------------

def _add_threshold(p, tau=False):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--threshold", type=float, help="decision threshold T")
    g.add_argument("--fit", help="fit JSON produced by the fit command")
    if tau:
        p.add_argument("--tau", type=float, help="use the threshold with this FPR from --fit")


def _add_detection(p):
    p.add_argument("--segment-s", type=float, default=3.0)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--window", type=int, default=5, help="refinement window W (odd)")
    p.add_argument("--rs", type=float, default=0.8, help="neighbour ratio R_s")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--strict-paper", dest="exclude_self", action="store_false",
                      help="running average includes the self term (default)")
    mode.add_argument("--exclude-self", dest="exclude_self", action="store_true",
                      help="running average excludes the self term and M_T")
    p.set_defaults(exclude_self=False)


def _add_room(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--spec-json", help="room spec JSON {room, mic, src, t60}")


def build_parser():
    parser = argparse.ArgumentParser(prog="echosig", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a clean-speech model on a WAV directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mixtures", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="write a deterministic synthetic speech WAV")
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate-signature", help="signature of a WAV file or span")
    p.add_argument("--audio", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--start-s", type=float, default=0.0)
    p.add_argument("--end-s", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_signature)

    p = sub.add_parser("authenticate", help="compare a query against a reference")
    p.add_argument("--query", required=True, help="signature JSON or WAV")
    p.add_argument("--reference", required=True, help="signature JSON or WAV")
    p.add_argument("--model", help="needed when a WAV is given")
    _add_threshold(p, tau=True)
    p.set_defaults(func=cmd_authenticate)

    p = sub.add_parser("detect", help="detect and localize spliced segments")
    p.add_argument("--audio", required=True)
    p.add_argument("--model", required=True)
    _add_threshold(p, tau=True)
    _add_detection(p)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="per-segment CSV (default: next to --out)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("fit", help="fit score distributions and the threshold")
    p.add_argument("--intra", required=True, help="same-environment scores CSV")
    p.add_argument("--inter", required=True, help="cross-environment scores CSV")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--tau", type=float, help="also report the FPR-constrained threshold")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sim-rir", help="simulate a room impulse response")
    _add_room(p)
    p.add_argument("--fs", type=int, default=16000)
    p.add_argument("--out", required=True)
    p.add_argument("--sidecar")
    p.set_defaults(func=cmd_sim_rir)

    p = sub.add_parser("reverb", help="reverberate a WAV in a simulated room")
    p.add_argument("--audio", required=True)
    _add_room(p)
    p.add_argument("--snr", type=float)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reverb)

    p = sub.add_parser("forge", help="butt-splice one WAV into another")
    p.add_argument("--host", required=True)
    p.add_argument("--insert", required=True)
    p.add_argument("--at", default="middle", help='"middle" or a sample offset')
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", required=True)
    p.set_defaults(func=cmd_forge)

    p = sub.add_parser("evaluate", help="score a detection report against ground truth")
    p.add_argument("--report", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--roc-out", help="write the ROC curve CSV here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run one seeded synthetic splice experiment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t60-a", type=float)
    p.add_argument("--t60-b", type=float)
    p.add_argument("--snr", type=float, help="SNR in dB for both branches (default: noiseless)")
    p.add_argument("--host-s", type=float, default=30.0)
    p.add_argument("--insert-s", type=float, default=15.0)
    p.add_argument("--model", help="use this model instead of training one")
    p.add_argument("--mixtures", type=int, default=16)
    p.add_argument("--corpus-size", type=int, default=10)
    p.add_argument("--threshold", type=float, help="skip calibration and use this T")
    p.add_argument("--calibration-rooms", type=int, default=16)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    _add_detection(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    loggers = [logging.getLogger("echosig"), logging.getLogger("py.warnings")]
    for lg in loggers:
        lg.addHandler(handler)
        lg.setLevel(logging.DEBUG if args.verbose else logging.WARNING)
    logging.captureWarnings(True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args)
    except NumericalError as exc:
        return _fail(3, exc)
    except (EchoSigError, ValueError, OSError) as exc:
        return _fail(2, exc)
    finally:
        logging.captureWarnings(False)
        for lg in loggers:
            lg.removeHandler(handler)
    return 0


def _fail(code, exc):
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    path = getattr(exc, "filename", None)
    if path:
        doc["path"] = str(path)
    print(json.dumps(doc), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
