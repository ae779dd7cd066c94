"""STFT front end, synthetic mixtures and PCM16 WAV files.

Spectrograms are ``(F, L)`` complex arrays (``F = window_size // 2 + 1``),
or ``(B, F, L)`` for a batch of equal-length waveforms. Frames are centred
by zero-padding ``window_size // 2`` samples on both sides.
"""
import csv
import math
import os
import wave
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps

from .errors import ArgumentError, ConfigError, FormatError, MissingFileError

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ArgumentError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ArgumentError("waveform has non-finite samples")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def _window(name, size):
    if name == "hann":
        return sps.get_window("hann", size, fftbins=True)
    if name == "sqrt_hann":
        return np.sqrt(sps.get_window("hann", size, fftbins=True))
    raise ConfigError(f"unknown window {name!r}")


@dataclass(frozen=True)
class StftConfig:
    window_size: int = 512
    hop: int = 128
    window: str = "hann"
    pad_mode: str = "center"

    def __post_init__(self):
        if not 0 < self.hop <= self.window_size:
            raise ConfigError(f"need 0 < hop <= window_size, got {self.hop}, {self.window_size}")
        if self.pad_mode != "center":
            raise ConfigError(f"unsupported pad_mode {self.pad_mode!r}")
        env = cola_envelope(self.taper, self.hop)
        if np.ptp(env) > 1e-10 * np.mean(env):
            raise ConfigError(
                f"{self.window} window of {self.window_size} at hop {self.hop} is not "
                f"constant-overlap-add (envelope spread {np.ptp(env):.3g})"
            )

    @property
    def taper(self):
        return _window(self.window, self.window_size)

    @property
    def n_freq(self):
        return self.window_size // 2 + 1

    def n_frames(self, n_samples):
        return 1 + n_samples // self.hop

    def to_dict(self):
        return asdict(self)


def cola_envelope(window, hop):
    """Interior values of ``sum_m window^2(n - m hop)`` over one hop period."""
    w2 = np.asarray(window) ** 2
    size = len(w2)
    reps = -(-size // hop) + 2
    buf = np.zeros(reps * hop + size)
    for m in range(reps + 1):
        start = m * hop
        if start + size > buf.size:
            break
        buf[start : start + size] += w2
    lo = size
    return buf[lo : lo + hop]


def _ola(frames, hop, total):
    """Overlap-add ``(..., L, W)`` frames at ``hop`` into a length-``total`` buffer."""
    lead = frames.shape[:-2]
    n_frames, size = frames.shape[-2:]
    out = np.zeros(lead + (total,))
    if size % hop == 0:
        r = size // hop
        blocks = np.zeros(lead + (n_frames + r - 1, hop))
        fr = frames.reshape(lead + (n_frames, r, hop))
        for j in range(r):
            blocks[..., j : j + n_frames, :] += fr[..., :, j, :]
        flat = blocks.reshape(lead + (-1,))
        out[..., : flat.shape[-1]] = flat[..., :total]
    else:
        for m in range(n_frames):
            out[..., m * hop : m * hop + size] += frames[..., m, :]
    return out


def _envelope(cfg, n_frames):
    w2 = cfg.taper ** 2
    total = (n_frames - 1) * cfg.hop + cfg.window_size
    return _ola(np.broadcast_to(w2, (n_frames, cfg.window_size)), cfg.hop, total)


def stft(samples, cfg):
    """Centred windowed DFT frames, shape ``(..., window_size // 2 + 1, n_frames)``."""
    x = np.asarray(samples.samples if isinstance(samples, Waveform) else samples, dtype=np.float64)
    if x.shape[-1] < cfg.window_size:
        raise ArgumentError(f"signal of {x.shape[-1]} samples shorter than window {cfg.window_size}")
    pad = cfg.window_size // 2
    padded = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(pad, pad)])
    frames = sliding_window_view(padded, cfg.window_size, axis=-1)[..., :: cfg.hop, :]
    frames = frames[..., : cfg.n_frames(x.shape[-1]), :]
    spec = np.fft.rfft(frames * cfg.taper, axis=-1)
    return np.swapaxes(spec, -1, -2)


def istft(spec, cfg, out_len=None):
    """Weighted overlap-add inverse of :func:`stft`; returns a real array."""
    spec = np.asarray(spec, dtype=np.complex128)
    n_frames = spec.shape[-1]
    if out_len is None:
        out_len = (n_frames - 1) * cfg.hop
    frames = np.fft.irfft(np.swapaxes(spec, -1, -2), n=cfg.window_size, axis=-1) * cfg.taper
    total = (n_frames - 1) * cfg.hop + cfg.window_size
    pad = cfg.window_size // 2
    if pad + out_len > total:
        raise ArgumentError(f"out_len {out_len} exceeds what {n_frames} frames cover")
    buf = _ola(frames, cfg.hop, total)
    env = _envelope(cfg, n_frames)
    return buf[..., pad : pad + out_len] / env[pad : pad + out_len]


def stft_adjoint(grad_spec, cfg, n_samples):
    """dL/dsamples from the packed dL/dspec of :func:`stft` (its real adjoint)."""
    g = np.swapaxes(np.asarray(grad_spec, dtype=np.complex128), -1, -2)
    size = cfg.window_size
    full = np.zeros(g.shape[:-1] + (size,), dtype=np.complex128)
    full[..., : g.shape[-1]] = g
    frames = (size * np.fft.ifft(full, axis=-1)).real * cfg.taper
    n_frames = g.shape[-2]
    total = (n_frames - 1) * cfg.hop + size
    buf = _ola(frames, cfg.hop, total)
    pad = size // 2
    return buf[..., pad : pad + n_samples]


def istft_adjoint(grad_wave, cfg, n_frames):
    """Packed dL/dspec from dL/dwaveform of :func:`istft`."""
    g = np.asarray(grad_wave, dtype=np.float64)
    size, hop = cfg.window_size, cfg.hop
    total = (n_frames - 1) * hop + size
    pad = size // 2
    n = g.shape[-1]
    env = _envelope(cfg, n_frames)
    u = np.zeros(g.shape[:-1] + (total,))
    u[..., pad : pad + n] = g / env[pad : pad + n]
    frames = sliding_window_view(u, size, axis=-1)[..., ::hop, :][..., :n_frames, :] * cfg.taper
    spec = np.fft.rfft(frames, axis=-1) * (2.0 / size)
    spec[..., 0] = spec[..., 0].real / 2.0
    if size % 2 == 0:
        spec[..., -1] = spec[..., -1].real / 2.0
    return np.swapaxes(spec, -1, -2)


# ---------------------------------------------------------------- synthesis

CLEAN_KINDS = ("harmonic_tone", "chirp", "filtered_noise_formant")
NOISE_KINDS = ("white", "pink", "babble_like")


@dataclass(frozen=True)
class MixtureSpec:
    clean_kind: str = "harmonic_tone"
    noise_kind: str = "white"
    snr_db: float = 5.0
    duration: float = 1.0
    seed: int = 0
    sample_rate: int = SAMPLE_RATE
    level: float = 0.05

    def __post_init__(self):
        if self.clean_kind not in CLEAN_KINDS:
            raise ArgumentError(f"unknown clean_kind {self.clean_kind!r}")
        if self.noise_kind not in NOISE_KINDS:
            raise ArgumentError(f"unknown noise_kind {self.noise_kind!r}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ArgumentError(f"snr_db must be finite or +inf, got {self.snr_db}")
        if not self.duration > 0:
            raise ArgumentError("duration must be positive")


def _envelope_am(rng, t, rate_lo=2.0, rate_hi=5.0):
    rate = rate_lo + (rate_hi - rate_lo) * rng.uniform(1)[0]
    phase = 2 * np.pi * rng.uniform(1)[0]
    return 0.55 + 0.45 * np.sin(2 * np.pi * rate * t + phase)


def _harmonic(rng, t, sr):
    f0 = 120.0 + 160.0 * rng.uniform(1)[0]
    vib = 0.02 * f0 * np.sin(2 * np.pi * (4.0 + 2.0 * rng.uniform(1)[0]) * t)
    inst = f0 + vib
    phase0 = 2 * np.pi * np.cumsum(inst) / sr
    n_harm = max(1, min(8, int(0.45 * sr / (f0 * 1.05))))
    phases = 2 * np.pi * rng.uniform(n_harm)
    out = sum(np.sin(h * phase0 + phases[h - 1]) / h for h in range(1, n_harm + 1))
    return out * _envelope_am(rng, t)


def _chirp(rng, t, sr):
    f_a = 200.0 + 400.0 * rng.uniform(1)[0]
    f_b = 800.0 + 1200.0 * rng.uniform(1)[0]
    dur = t[-1] + 1.0 / sr
    phase = 2 * np.pi * (f_a * t + 0.5 * (f_b - f_a) * t * t / dur)
    return (np.sin(phase) + 0.5 * np.sin(2 * phase + 2 * np.pi * rng.uniform(1)[0])) * _envelope_am(rng, t)


def _resonator(rng, x, sr, lo, hi, bw=120.0):
    fc = lo + (hi - lo) * rng.uniform(1)[0]
    r = math.exp(-math.pi * bw / sr)
    a = [1.0, -2.0 * r * math.cos(2 * math.pi * fc / sr), r * r]
    return sps.lfilter([1.0 - r], a, x)


def _formant(rng, t, sr):
    src = rng.normal(len(t))
    out = _resonator(rng, src, sr, 400.0, 900.0) + 0.7 * _resonator(rng, src, sr, 1100.0, 2200.0)
    return out * _envelope_am(rng, t)


def _pink(rng, n):
    spec = np.fft.rfft(rng.normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spec / np.sqrt(f), n=n)


def _babble(rng, t, sr):
    return sum(_formant(rng, t, sr) for _ in range(5))


def _rms(x):
    return math.sqrt(float(np.mean(np.square(x))))


def synth_pair(spec, rng=None, max_retries=8):
    """Return ``(clean, noisy)`` waveforms mixed at exactly ``spec.snr_db``.

    The clean signal has RMS ``spec.level``; the noise is rescaled so that
    ``10 log10(|clean|^2 / |noise|^2) = snr_db``.
    """
    from .numerics import Rng

    rng = Rng(spec.seed) if rng is None else rng
    sr = spec.sample_rate
    n = int(round(spec.duration * sr))
    t = np.arange(n) / sr
    make_clean = {"harmonic_tone": _harmonic, "chirp": _chirp, "filtered_noise_formant": _formant}
    for _ in range(max_retries):
        clean = make_clean[spec.clean_kind](rng, t, sr)
        if _rms(clean) > 1e-12:
            break
    else:
        raise ArgumentError(f"could not draw a non-silent {spec.clean_kind} signal")
    clean = clean * (spec.level / _rms(clean))
    if spec.snr_db == math.inf:
        return Waveform(clean, sr), Waveform(clean.copy(), sr)
    if spec.noise_kind == "white":
        noise = rng.normal(n)
    elif spec.noise_kind == "pink":
        noise = _pink(rng, n)
    else:
        noise = _babble(rng, t, sr)
    gain = math.sqrt(np.sum(clean ** 2) / (np.sum(noise ** 2) * 10.0 ** (spec.snr_db / 10.0)))
    return Waveform(clean, sr), Waveform(clean + gain * noise, sr)


def mixture_specs(n, seed=0, snr_grid=(0.0, 5.0, 10.0, 15.0), clean_kinds=CLEAN_KINDS,
                  noise_kinds=NOISE_KINDS, duration=1.0, sample_rate=SAMPLE_RATE):
    """The ``n`` mixtures of a seeded synthetic dataset.

    Item ``i`` cycles the SNR grid and the clean kinds with ``i`` and the
    noise kinds with ``i // len(clean_kinds)``; its seed is the seed of
    ``Rng(seed).spawn(i)``, so item ``i`` does not depend on ``n``.
    """
    from .numerics import Rng

    if n < 1:
        raise ArgumentError(f"need at least one mixture, got {n}")
    root = Rng(seed)
    nc = len(clean_kinds)
    return [
        MixtureSpec(clean_kinds[i % nc], noise_kinds[(i // nc) % len(noise_kinds)],
                    float(snr_grid[i % len(snr_grid)]), duration, root.spawn(i).seed, sample_rate)
        for i in range(n)
    ]


def measured_snr_db(clean, noisy):
    c = clean.samples if isinstance(clean, Waveform) else clean
    d = (noisy.samples if isinstance(noisy, Waveform) else noisy) - c
    return 10.0 * math.log10(np.sum(c ** 2) / np.sum(d ** 2))


# ---------------------------------------------------------------- WAV files

def wav_write(path, wav):
    """Write 16-bit PCM mono; samples are clipped to [-1, 1]."""
    pcm = np.round(np.clip(wav.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(os.fspath(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(wav.sample_rate))
        fh.writeframes(pcm.tobytes())


def wav_read(path):
    path = os.fspath(path)
    if not os.path.exists(path):
        raise MissingFileError(f"{path}: no such file")
    try:
        with wave.open(path, "rb") as fh:
            if fh.getcomptype() != "NONE":
                raise FormatError(f"{path}: 'fmt ' chunk declares compressed audio")
            if fh.getnchannels() != 1:
                raise FormatError(f"{path}: 'fmt ' chunk declares {fh.getnchannels()} channels, need mono")
            if fh.getsampwidth() != 2:
                raise FormatError(f"{path}: 'fmt ' chunk declares {8 * fh.getsampwidth()}-bit samples, need 16")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except EOFError as exc:
        raise FormatError(f"{path}: truncated 'RIFF' header") from exc
    except wave.Error as exc:
        raise FormatError(f"{path}: bad 'RIFF'/'fmt '/'data' chunk structure ({exc})") from exc
    if len(raw) % 2:
        raise FormatError(f"{path}: 'data' chunk has an odd byte count")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(samples, rate)


# ---------------------------------------------------------------- manifests

MANIFEST_FIELDS = ("id", "clean", "noisy", "seed", "snr_db", "clean_kind", "noise_kind")


def write_manifest(path, rows):
    """Tab-separated index with a header line; paths are relative to the manifest."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, MANIFEST_FIELDS, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in MANIFEST_FIELDS})


def read_manifest(path):
    path = os.fspath(path)
    if not os.path.exists(path):
        raise MissingFileError(f"{path}: no such manifest")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None or not {"id", "noisy"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: manifest header must include 'id' and 'noisy'")
        rows = list(reader)
    base = os.path.dirname(os.path.abspath(path))
    for row in rows:
        for key in ("clean", "noisy"):
            if row.get(key):
                row[key] = os.path.join(base, row[key])
    return rows
