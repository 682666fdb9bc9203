"""Audio buffers, PCM16 WAV I/O, segmentation and synthetic speech."""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from ._validation import InputError, check_samples

logger = logging.getLogger(__name__)

CANONICAL_RATE = 16000
_PCM_SCALE = 32768.0


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio samples in [-1, 1] with their sample rate.

    The sample array is copied and made read-only so buffers can be shared
    freely between threads and estimators.
    """

    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_RATE

    def __post_init__(self):
        arr = check_samples(self.samples).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise InputError(f"sample rate must be a positive integer, got {self.sample_rate_hz}")
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate_hz

    def slice(self, start, end):
        return AudioBuffer(self.samples[start:end], self.sample_rate_hz)

    def scaled(self, gain):
        return AudioBuffer(self.samples * gain, self.sample_rate_hz)


@dataclass(frozen=True)
class SegmentPlan:
    segment_len_s: float
    overlap_fraction: float
    boundaries: list = field(default_factory=list)

    def __len__(self):
        return len(self.boundaries)


def load_wav(path, expected_rate=CANONICAL_RATE):
    """Read a PCM16 RIFF/WAVE file into a mono :class:`AudioBuffer`.

    Multichannel files are averaged to mono. Set ``expected_rate=None`` to
    accept any sample rate.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise InputError(f"{path}: malformed or unsupported WAV file ({exc})") from exc
    if width != 2:
        raise InputError(f"{path}: only 16-bit PCM is supported, got {8 * width}-bit")
    if n_frames == 0 or len(raw) == 0:
        raise InputError(f"{path}: WAV file has no sample data")
    if expected_rate is not None and rate != expected_rate:
        raise InputError(
            f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz; "
            "resample externally before analysis"
        )
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _PCM_SCALE
    pcm = pcm[: (pcm.size // n_channels) * n_channels].reshape(-1, n_channels)
    return AudioBuffer(pcm.mean(axis=1), rate)


def save_wav(buffer, path):
    """Write `buffer` as mono PCM16 and return the number of clipped samples."""
    if not isinstance(buffer, AudioBuffer):
        buffer = AudioBuffer(buffer)
    scaled = np.round(buffer.samples * _PCM_SCALE)
    clipped = int(np.count_nonzero((scaled > 32767) | (scaled < -32768)))
    if clipped:
        logger.warning("%s: clipped %d samples", path, clipped)
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    try:
        with open(path, "wb") as fh, wave.open(fh, "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(buffer.sample_rate_hz)
            wf.writeframes(pcm.tobytes())
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc
    return clipped


def plan_segments(buffer, segment_len_s, overlap_fraction=0.5, min_len=2048):
    """Split `buffer` into fully contained, evenly spaced analysis segments.

    Trailing audio that does not fill a whole segment is dropped.
    """
    if not 0.0 <= overlap_fraction < 1.0:
        raise InputError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    fs = buffer.sample_rate_hz
    seg_len = int(round(segment_len_s * fs))
    if seg_len < min_len:
        raise InputError(
            f"segment of {segment_len_s} s is {seg_len} samples, shorter than one "
            f"STFT frame ({min_len})"
        )
    hop = max(1, int(round(segment_len_s * fs * (1.0 - overlap_fraction))))
    n = len(buffer)
    if n < seg_len:
        raise InputError(f"audio of {n / fs:.3f} s is shorter than one {segment_len_s} s segment")
    starts = range(0, n - seg_len + 1, hop)
    return SegmentPlan(float(segment_len_s), float(overlap_fraction),
                       [(s, s + seg_len) for s in starts])


# (F1, F2, F3) targets in Hz for a handful of vowels.
_VOWELS = np.array([
    [730, 1090, 2440], [270, 2290, 3010], [530, 1840, 2480], [660, 1720, 2410],
    [570, 840, 2410], [440, 1020, 2240], [300, 870, 2240], [640, 1190, 2390],
    [490, 1350, 1690], [390, 1990, 2550],
], dtype=float)
_BANDWIDTHS = np.array([80.0, 110.0, 160.0])


def _resonator(freq, bw, fs):
    """Two-pole resonator coefficients normalised to unit gain at DC."""
    r = np.exp(-np.pi * bw / fs)
    a = np.array([1.0, -2.0 * r * np.cos(2 * np.pi * freq / fs), r * r])
    return np.array([a.sum()]), a


def synth_speech(duration_s, seed, sample_rate_hz=CANONICAL_RATE):
    """Deterministic speech-like test signal.

    White noise drives a parallel bank of three slowly moving formant
    resonators during "voiced" phones and a high-frequency resonator during
    "unvoiced" ones; both keep a weak broadband floor so no band falls
    silent. Filters are updated every 5 ms with carried state so formant
    glides stay click-free. Same ``(duration_s, seed)`` gives identical
    samples.
    """
    if not duration_s > 0:
        raise InputError(f"duration_s must be positive, got {duration_s}")
    fs = int(sample_rate_hz)
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))
    block = max(1, fs // 200)
    n_blocks = -(-n // block)

    # Phone timeline at block resolution.
    kinds, formants, levels, fric = [], [], [], []
    while len(kinds) < n_blocks:
        voiced = rng.random() < 0.75
        length = int(rng.integers(12, 50)) if voiced else int(rng.integers(8, 30))
        target = _VOWELS[rng.integers(len(_VOWELS))] * rng.uniform(0.9, 1.1, 3)
        kinds += [0 if voiced else 1] * length
        formants += [target] * length
        levels += [rng.uniform(0.4, 1.0) if voiced else rng.uniform(0.3, 0.6)] * length
        fric += [rng.uniform(3000, 6000)] * length
    kinds = np.array(kinds[:n_blocks])
    formants = np.array(formants[:n_blocks])
    levels = np.array(levels[:n_blocks])
    fric = np.array(fric[:n_blocks])

    # Smooth trajectories with a ~40 ms moving average.
    kern = np.ones(8) / 8.0
    formants = np.stack(
        [np.convolve(np.pad(formants[:, j], (4, 3), mode="edge"), kern, "valid")
         for j in range(3)], axis=1)
    levels = np.convolve(np.pad(levels, (4, 3), mode="edge"), kern, "valid")

    excitation = rng.standard_normal(n_blocks * block)
    bank = np.zeros((3, excitation.size))
    unvoiced = np.zeros_like(excitation)
    zi_f = [np.zeros(2) for _ in range(3)]
    zi_u = np.zeros(2)
    for b in range(n_blocks):
        sl = slice(b * block, (b + 1) * block)
        for j in range(3):
            num, den = _resonator(formants[b, j], _BANDWIDTHS[j], fs)
            bank[j, sl], zi_f[j] = lfilter(num, den, excitation[sl], zi=zi_f[j])
        num, den = _resonator(fric[b], 1500.0, fs)
        unvoiced[sl], zi_u = lfilter(num, den, excitation[sl], zi=zi_u)

    bank /= bank.std(axis=1, keepdims=True) + 1e-12
    unvoiced /= np.std(unvoiced) + 1e-12
    voiced = bank[0] + 0.5 * bank[1] + 0.3 * bank[2] + 0.1 * excitation
    unvoiced = unvoiced + 0.3 * excitation
    ramp = np.ones(block) / block
    v_gain = np.convolve(np.repeat((kinds == 0) * levels, block), ramp, mode="same")
    u_gain = np.convolve(np.repeat((kinds == 1) * levels, block), ramp, mode="same")
    out = (v_gain * voiced + u_gain * unvoiced)[:n]
    out -= out.mean()
    out *= 0.5 / np.max(np.abs(out))
    return AudioBuffer(out, fs)
