"""Shoebox image-source room simulation and forgery construction."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import fftconvolve

from ._validation import InputError
from .audio_io import AudioBuffer

SPEED_OF_SOUND = 343.0
SINC_TAPS = 81


@dataclass(frozen=True)
class RoomSpec:
    """Room size, microphone and source positions (metres) and T60 (seconds)."""

    room: tuple
    mic: tuple
    src: tuple
    t60: float

    def __post_init__(self):
        room, mic, src = (np.asarray(v, dtype=float) for v in (self.room, self.mic, self.src))
        if room.shape != (3,) or mic.shape != (3,) or src.shape != (3,):
            raise InputError("room, mic and src must be 3-vectors")
        if np.any(room <= 0):
            raise InputError("room dimensions must be positive")
        for name, p in (("mic", mic), ("src", src)):
            if np.any(p <= 0) or np.any(p >= room):
                raise InputError(f"{name} position {p.tolist()} is not strictly inside the room")
        if not self.t60 >= 0:
            raise InputError(f"T60 must be non-negative, got {self.t60}")
        for name, v in (("room", room), ("mic", mic), ("src", src)):
            object.__setattr__(self, name, tuple(float(x) for x in v))
        object.__setattr__(self, "t60", float(self.t60))

    @property
    def volume(self):
        return float(np.prod(self.room))

    @property
    def surface(self):
        x, y, z = self.room
        return 2.0 * (x * y + x * z + y * z)

    @property
    def distance(self):
        return float(np.linalg.norm(np.subtract(self.src, self.mic)))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(tuple(doc["room"]), tuple(doc["mic"]), tuple(doc["src"]), float(doc["t60"]))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed room spec: {exc!r}") from exc


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate_hz: int
    spec: RoomSpec | None = None
    reflection: float | None = None

    def as_buffer(self):
        return AudioBuffer(self.taps, self.sample_rate_hz)


def sample_room(seed):
    """Draw a room uniformly from the candidate parameter ranges.

    Height in [2.5, 3.5], width in [2.5, 5], length in [width, 10],
    T60 in [0.1, 0.7]; microphone and source ranges depend on the room size.
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform
    rz = u(2.5, 3.5)
    rx = u(2.5, 5.0)
    ry = u(rx, 10.0)
    t60 = u(0.1, 0.7)
    mic = (u(0.5, rx - 0.5), u(0.5, ry - 0.5), u(0.5, 1.0))
    src = (u(0.3, rx - 0.9), u(0.3, ry - 0.9), u(0.4, rz - 0.8))
    return RoomSpec((rx, ry, rz), mic, src, t60)


def reflection_coefficient(spec):
    """Uniform pressure reflection coefficient from Eyring's reverberation formula."""
    if spec.t60 == 0:
        return 0.0
    absorption = 1.0 - np.exp(-0.161 * spec.volume / (spec.surface * spec.t60))
    if not 0.0 <= absorption <= 1.0:
        raise InputError(f"T60={spec.t60} gives a non-physical absorption {absorption}")
    return float(np.sqrt(1.0 - absorption))


def _axis_images(length, src, mic, n_max):
    """Image offsets along one axis: positions relative to mic and reflection counts."""
    i = np.arange(-n_max, n_max + 1)
    pos = np.where(i % 2 == 0, i * length + src, (i + 1) * length - src)
    return pos - mic, np.abs(i)


def _enumerate_images(spec, max_dist, max_order=None):
    """Distances and reflection counts of all images closer than `max_dist`."""
    room = np.asarray(spec.room)
    if max_order is None:
        orders = [int(np.ceil(max_dist / L)) + 1 for L in room]
    else:
        orders = [int(max_order)] * 3
    (dx, nx), (dy, ny), (dz, nz) = (
        _axis_images(room[a], spec.src[a], spec.mic[a], orders[a]) for a in range(3))
    yz_d2 = (dy[:, None] ** 2 + dz[None, :] ** 2).ravel()
    yz_n = (ny[:, None] + nz[None, :]).ravel()
    dists, counts = [], []
    # One x-slice at a time keeps memory bounded for long, small rooms.
    for x_off, x_n in zip(dx, nx):
        d = np.sqrt(x_off ** 2 + yz_d2)
        keep = d < max_dist
        if keep.any():
            dists.append(d[keep])
            counts.append(x_n + yz_n[keep])
    return np.concatenate(dists), np.concatenate(counts)


def _edc_t60(energy, fs, fit_range_db=(-5.0, -25.0)):
    edc = np.cumsum(energy[::-1])[::-1]
    edc_db = 10.0 * np.log10(edc / edc[0] + 1e-300)
    hi, lo = fit_range_db
    idx = np.flatnonzero((edc_db <= hi) & (edc_db >= lo))
    if idx.size < 2:
        return np.nan
    slope, _ = np.polyfit(idx / fs, edc_db[idx], 1)
    return -60.0 / slope if slope < 0 else np.inf


def _windowed_sinc(frac, half):
    t = np.arange(-half, half + 1) - frac
    return np.sinc(t) * (0.5 + 0.5 * np.cos(np.pi * t / (half + 1)))


def _render(dists, counts, beta, fs, n_taps, subsample):
    half = SINC_TAPS // 2
    gain = np.power(beta, counts) / (4.0 * np.pi * dists)
    delay = dists / SPEED_OF_SOUND * fs
    base = np.floor(delay).astype(np.int64)
    q = np.rint((delay - base) * subsample).astype(np.int64)
    base += q // subsample
    q %= subsample
    length = n_taps + 2 * half + 2
    hist = np.bincount(base * subsample + q, weights=gain,
                       minlength=length * subsample)[: length * subsample]
    hist = hist.reshape(length, subsample)
    out = np.zeros(length + 2 * half)
    for j in np.flatnonzero(hist.any(axis=0)):
        out += np.convolve(hist[:, j], _windowed_sinc(j / subsample, half))
    # Kernel index 0 corresponds to an offset of -half samples.
    return out[half: half + n_taps]


def image_source_rir(spec, fs=16000, max_order=None, beta=None, calibrate=True,
                     subsample=64, max_calibration_steps=8):
    """Room impulse response of a shoebox room by the image-source method.

    Every image contributes ``beta**reflections / (4 pi d)`` at delay ``d / c``,
    rendered with an 81-tap Hann-windowed sinc. Fractional delays are
    resolved to ``1/subsample`` of a sample. The response lasts
    ``ceil(1.25 * T60 * fs)`` samples, extended if needed to hold the
    direct path.

    The reflection coefficient starts from Eyring's formula. Shoebox images
    with uniform absorption decay more slowly than the diffuse-field
    prediction (axial paths meet few walls, and all-positive gains add
    coherently at low frequencies), so with ``calibrate=True`` ``log(beta)``
    is rescaled by the ratio of measured (Schroeder) to requested T60 until
    the two agree within 2%.

    Parameters
    ----------
    spec : RoomSpec
    fs : int
    max_order : int or None
        Largest image index per axis; by default every image whose travel
        time fits in the response is included.
    beta : float, optional
        Fixed reflection coefficient (``0`` gives the direct path only);
        disables calibration.
    """
    if fs <= 0:
        raise InputError("fs must be positive")
    half = SINC_TAPS // 2
    direct = spec.distance / SPEED_OF_SOUND * fs
    n_taps = max(int(np.ceil(1.25 * spec.t60 * fs)), int(np.ceil(direct)) + half + 1)
    max_dist = n_taps / fs * SPEED_OF_SOUND
    explicit = beta is not None
    if not explicit:
        beta = reflection_coefficient(spec)
    if beta == 0.0:
        dists, counts = np.array([spec.distance]), np.array([0])
    else:
        dists, counts = _enumerate_images(spec, max_dist, max_order)
    taps = _render(dists, counts, beta, fs, n_taps, subsample)
    if calibrate and not explicit and beta > 0.0:
        best = (np.inf, beta, taps)
        for _ in range(max_calibration_steps):
            ratio = _edc_t60(taps ** 2, fs) / spec.t60
            if not np.isfinite(ratio):
                break
            if abs(np.log(ratio)) < best[0]:
                best = (abs(np.log(ratio)), beta, taps)
            if abs(ratio - 1.0) < 0.02:
                break
            beta = float(np.clip(np.exp(np.log(beta) * ratio), 1e-3, 1.0 - 1e-6))
            taps = _render(dists, counts, beta, fs, n_taps, subsample)
        else:
            ratio = _edc_t60(taps ** 2, fs) / spec.t60
            if np.isfinite(ratio) and abs(np.log(ratio)) < best[0]:
                best = (abs(np.log(ratio)), beta, taps)
        _, beta, taps = best
    return Rir(taps, int(fs), spec, float(beta))


def reverberate(speech, rir):
    """Convolve `speech` with the RIR, trimmed to the input length.

    Returns ``(buffer, scale)``; the output is rescaled to a 0.9 peak only
    when it would otherwise leave [-1, 1], and `scale` reports the factor.
    """
    taps = rir.taps if isinstance(rir, Rir) else np.asarray(rir, dtype=float)
    rir_fs = rir.sample_rate_hz if isinstance(rir, Rir) else speech.sample_rate_hz
    if rir_fs != speech.sample_rate_hz:
        raise InputError(f"sample rate mismatch: speech {speech.sample_rate_hz} Hz, RIR {rir_fs} Hz")
    y = fftconvolve(speech.samples, taps)[: len(speech)]
    peak = np.max(np.abs(y))
    scale = 1.0
    if peak >= 1.0:
        scale = 0.9 / peak
        y = y * scale
    return AudioBuffer(y, speech.sample_rate_hz), scale


def add_noise_snr(signal, snr_db, seed):
    """Add white Gaussian noise at the requested full-buffer SNR (dB)."""
    x = signal.samples
    p_sig = np.mean(x ** 2)
    if p_sig == 0.0:
        raise InputError("cannot set an SNR on a silent signal")
    noise = np.random.default_rng(seed).standard_normal(x.size)
    noise *= np.sqrt(p_sig / 10.0 ** (snr_db / 10.0) / np.mean(noise ** 2))
    return AudioBuffer(x + noise, signal.sample_rate_hz)


def forge(host, insert, position="middle"):
    """Butt-splice `insert` into `host`.

    Parameters
    ----------
    position : "middle" or int
        Sample offset into `host` where the insert starts.

    Returns
    -------
    (AudioBuffer, GroundTruth)
    """
    from .detector import GroundTruth

    insert_samples = insert.samples if isinstance(insert, AudioBuffer) else np.asarray(insert, float)
    if isinstance(insert, AudioBuffer) and insert.sample_rate_hz != host.sample_rate_hz:
        raise InputError("host and insert sample rates differ")
    n = len(host)
    p = n // 2 if position == "middle" else int(position)
    if not 0 <= p <= n:
        raise InputError(f"splice position {p} outside host of {n} samples")
    out = np.concatenate([host.samples[:p], insert_samples, host.samples[p:]])
    m = insert_samples.size
    regions = []
    if p > 0:
        regions.append((0, p, "original"))
    if m > 0:
        regions.append((p, p + m, "spliced"))
    if n - p > 0:
        regions.append((p + m, n + m, "original"))
    return AudioBuffer(out, host.sample_rate_hz), GroundTruth(host.sample_rate_hz, regions)


def schroeder_t60(taps, fs, fit_range_db=(-5.0, -25.0)):
    """Reverberation time from a line fit to the backward-integrated decay curve."""
    t60 = _edc_t60(np.asarray(taps, dtype=float) ** 2, fs, fit_range_db)
    if np.isnan(t60):
        raise InputError("decay curve does not span the fit range")
    return t60


def save_rir(rir, wav_path, sidecar_path=None):
    """Store taps as peak-normalised PCM16 plus a JSON sidecar with the room geometry."""
    from .audio_io import save_wav

    peak = float(np.max(np.abs(rir.taps))) or 1.0
    save_wav(AudioBuffer(rir.taps / peak * 0.99, rir.sample_rate_hz), wav_path)
    if sidecar_path is not None:
        with open(sidecar_path, "w", encoding="utf-8") as fh:
            json.dump({"sample_rate_hz": rir.sample_rate_hz, "scale": peak / 0.99,
                       "spec": rir.spec.to_dict() if rir.spec else None}, fh, indent=2)
