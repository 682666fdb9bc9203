import json
import subprocess
import sys

import numpy as np
import pytest

from echosig.audio_io import save_wav, synth_speech
from echosig.cli import main
from echosig.experiments import make_forgery
from echosig.stat_fit import EvdParams, GgdParams, evd_sample, ggd_sample


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


@pytest.fixture(scope="module")
def model_file(tmp_path_factory, model):
    path = tmp_path_factory.mktemp("m") / "model.json"
    model.save(path)
    return path


def test_train_deterministic(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for i in range(3):
        save_wav(synth_speech(8.0, 40 + i), corpus / f"u{i}.wav")
    outs = []
    for name in ("a.json", "b.json"):
        code, doc, _ = run(capsys, "train", "--corpus", corpus, "--mixtures", 4, "--seed", 1,
                           "--out", tmp_path / name)
        assert code == 0 and doc["frames"] > 0 and "log_likelihood" in doc
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    model_doc = json.loads(outs[0])
    assert len(model_doc["gmm"]["weights"]) == 4


def test_train_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code, _, err = run(capsys, "train", "--corpus", tmp_path / "empty", "--out", tmp_path / "m.json")
    assert code == 2
    assert "no input files" in json.loads(err.strip().splitlines()[-1])["message"]


def test_fit_command(tmp_path, capsys):
    intra = evd_sample(EvdParams(0.72, 0.11), 20000, 1)
    inter = ggd_sample(GgdParams(0.077, 0.14, 1.74), 20000, 2)
    np.savetxt(tmp_path / "intra.csv", intra)
    np.savetxt(tmp_path / "inter.csv", inter)
    code, doc, _ = run(capsys, "fit", "--intra", tmp_path / "intra.csv", "--inter",
                       tmp_path / "inter.csv", "--out", tmp_path / "fit.json")
    assert code == 0
    assert doc["lambda"] == 0.5
    assert doc["T"] == pytest.approx(0.3274, abs=0.05)
    assert doc["combined_error"] == pytest.approx(0.0223, abs=0.01)
    saved = json.loads((tmp_path / "fit.json").read_text())
    assert saved["lambda"] == 0.5 and set(saved) >= {"evd", "ggd", "threshold", "kld"}
    np.savetxt(tmp_path / "flat.csv", np.full(50, 0.8))
    code, _, _ = run(capsys, "fit", "--intra", tmp_path / "flat.csv", "--inter",
                     tmp_path / "inter.csv", "--out", tmp_path / "f2.json")
    assert code == 2


def test_detect_and_evaluate(tmp_path, capsys, model_file):
    forgery = make_forgery(11, host_s=16.0, insert_s=8.0)
    save_wav(forgery.audio, tmp_path / "f.wav")
    forgery.truth.save(tmp_path / "truth.json")
    code, doc, _ = run(capsys, "detect", "--audio", tmp_path / "f.wav", "--model", model_file,
                       "--threshold", 0.45, "--segment-s", 2, "--rs", 0.4,
                       "--out", tmp_path / "report.json")
    assert code == 0 and doc["segments"] > 0
    rows = (tmp_path / "report.csv").read_text().splitlines()
    assert rows[0] == "index,start,end,rho,p,q" and len(rows) == doc["segments"] + 1
    code, metrics, _ = run(capsys, "evaluate", "--report", tmp_path / "report.json", "--truth",
                           tmp_path / "truth.json", "--roc-out", tmp_path / "roc.csv")
    assert code == 0 and metrics["accuracy"] >= 0.8
    assert (tmp_path / "roc.csv").read_text().startswith("threshold,fpr,tpr")


def test_detect_errors(tmp_path, capsys, model_file):
    save_wav(synth_speech(3.0, 1), tmp_path / "short.wav")
    code, _, err = run(capsys, "detect", "--audio", tmp_path / "short.wav", "--model",
                       tmp_path / "missing.json", "--threshold", 0.4, "--out", tmp_path / "r.json")
    assert code == 2
    assert "missing.json" in json.loads(err.strip().splitlines()[-1])["message"]
    code, _, _ = run(capsys, "detect", "--audio", tmp_path / "short.wav", "--model", model_file,
                     "--threshold", 0.4, "--out", tmp_path / "r.json")
    assert code == 2
    code, _, _ = run(capsys, "detect", "--audio", tmp_path / "short.wav", "--model", model_file,
                     "--out", tmp_path / "r.json")
    assert code == 2


def test_signature_and_authenticate(tmp_path, capsys, model_file):
    forgery = make_forgery(12, host_s=8.0, insert_s=4.0)
    save_wav(forgery.control, tmp_path / "a.wav")
    for name, (s, e) in (("q", (0, 4)), ("r", (6, 10))):
        code, doc, _ = run(capsys, "estimate-signature", "--audio", tmp_path / "a.wav", "--model",
                           model_file, "--start-s", s, "--end-s", e, "--out", tmp_path / f"{name}.json")
        assert code == 0 and doc["K"] == 1025
    code, doc, _ = run(capsys, "authenticate", "--query", tmp_path / "q.json", "--reference",
                       tmp_path / "r.json", "--threshold", 0.45)
    assert code == 0 and doc["decision"] == "as-claimed"
    code, doc, _ = run(capsys, "authenticate", "--query", tmp_path / "a.wav", "--reference",
                       tmp_path / "r.json", "--model", model_file, "--threshold", 1.0)
    assert code == 0 and doc["decision"] == "forged"


def test_sim_reverb_forge(tmp_path, capsys):
    code, doc, _ = run(capsys, "sim-rir", "--seed", 3, "--out", tmp_path / "rir.wav")
    assert code == 0 and json.loads((tmp_path / "rir.json").read_text())["spec"] == doc["spec"]
    save_wav(synth_speech(4.0, 1), tmp_path / "dry.wav")
    save_wav(synth_speech(2.0, 2), tmp_path / "ins.wav")
    code, doc, _ = run(capsys, "reverb", "--audio", tmp_path / "dry.wav", "--seed", 3, "--snr", 20,
                       "--out", tmp_path / "wet.wav")
    assert code == 0
    code, doc, _ = run(capsys, "forge", "--host", tmp_path / "wet.wav", "--insert", tmp_path / "ins.wav",
                       "--out", tmp_path / "forged.wav", "--truth-out", tmp_path / "truth.json")
    assert code == 0
    assert doc["regions"][1] == {"start_sample": 32000, "end_sample": 64000, "label": "spliced"}


def test_pipeline_deterministic_and_warns(tmp_path, capsys, model_file):
    args = ["pipeline", "--seed", 2, "--model", model_file, "--threshold", 0.45,
            "--host-s", 12, "--insert-s", 6, "--segment-s", 2]
    code, first, _ = run(capsys, *args, "--out", tmp_path / "a")
    code2, second, _ = run(capsys, *args, "--out", tmp_path / "b")
    assert code == code2 == 0
    assert first == second and "accuracy" in first and first["lambda"] == 0.5
    for name in ("metrics.json", "report.json", "report.csv", "roc.csv", "truth.json", "forged.wav"):
        assert (tmp_path / "a" / name).exists()
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    code, _, err = run(capsys, "pipeline", "--seed", 2, "--model", model_file, "--threshold", 0.45,
                       "--host-s", 6, "--insert-s", 3, "--segment-s", 0.4, "--out", tmp_path / "c")
    assert code == 0 and "0.5 s" in err


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "echosig.cli", "detect"], capture_output=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "echosig.cli", "--help"], capture_output=True)
    assert proc.returncode == 0 and b"pipeline" in proc.stdout
