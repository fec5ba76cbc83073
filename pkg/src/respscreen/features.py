"""Feature extraction: Mel-spectrograms, cochleagrams, and the flattened
statistics + embedding vector consumed by the tree ensembles.

Three representations come out of here:

* a 2-channel (log-power + positional) 128-bin Mel-spectrogram at 48 kHz
  for the convolutional classifier branch,
* a single-channel 128x512 Mel-spectrogram at 8 kHz for the cough gate, and
* a 1356-value vector (100 cochlear bins x 11 statistics, then a 256-value
  embedding) for the gradient-boosted branches.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from . import _kernels
from .audio import AudioClip, peak_normalize, resample
from .errors import ContractError, EmptyInputError, TooShortError

# Classifier path (48 kHz): 54 ms window, 14 ms hop, Hann, 128 bins over
# 20 Hz..24 kHz. FFT size is the next power of two above the window.
CLASSIFIER_SR = 48000
CLASSIFIER_WIN = 2592
CLASSIFIER_FFT = 4096
CLASSIFIER_HOP = 672
CLASSIFIER_N_MELS = 128
CLASSIFIER_FMIN = 20.0
CLASSIFIER_FMAX = 24000.0
CLASSIFIER_TARGET_FRAMES = 571  # an exact "roughly eight seconds": round(8.0 / 0.014)

# Detector path (8 kHz): clips padded to >= 2 s, FFT/window 743, hop 186,
# 128 bins, time axis fitted to 512 frames.
DETECTOR_SR = 8000
DETECTOR_PAD_SECONDS = 2.0
DETECTOR_FFT = 743
DETECTOR_HOP = 186
DETECTOR_N_MELS = 128
DETECTOR_TARGET_FRAMES = 512

LOG_FLOOR = 1e-10

N_COCHLEA_BINS = 100
COCHLEA_FMIN = 50.0
COCHLEA_FMAX_FACTOR = 0.45
GAMMATONE_ORDER = 4
ERB_Q_FACTOR = 1.019  # gammatone bandwidth in ERBs

N_STATISTICS = 11
EMBEDDING_DIM = 256
FEATURE_VECTOR_LEN = N_COCHLEA_BINS * N_STATISTICS + EMBEDDING_DIM

STATISTIC_NAMES = (
    "mean", "median", "std", "skew", "kurtosis",
    "min", "max", "q1", "q3", "iqr", "l2",
)


# ---------------------------------------------------------------------------
# Mel scale helpers
# ---------------------------------------------------------------------------

def hz_to_mel(f, scale: str = "slaney"):
    f = np.asarray(f, dtype=np.float64)
    if scale == "htk":
        return 2595.0 * np.log10(1.0 + f / 700.0)
    if scale == "slaney":
        f_sp = 200.0 / 3.0
        min_log_hz = 1000.0
        min_log_mel = min_log_hz / f_sp
        logstep = np.log(6.4) / 27.0
        return np.where(f < min_log_hz, f / f_sp,
                        min_log_mel + np.log(np.maximum(f, 1e-30) / min_log_hz) / logstep)
    raise ValueError(f"unknown mel scale: {scale!r}")


def mel_to_hz(m, scale: str = "slaney"):
    m = np.asarray(m, dtype=np.float64)
    if scale == "htk":
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    if scale == "slaney":
        f_sp = 200.0 / 3.0
        min_log_hz = 1000.0
        min_log_mel = min_log_hz / f_sp
        logstep = np.log(6.4) / 27.0
        return np.where(m < min_log_mel, m * f_sp,
                        min_log_hz * np.exp(logstep * (m - min_log_mel)))
    raise ValueError(f"unknown mel scale: {scale!r}")


def mel_center_frequencies(n_mels: int, fmin: float, fmax: float,
                           scale: str = "slaney") -> np.ndarray:
    """Closed-form Mel filter center frequencies (the filter peaks)."""
    pts = mel_to_hz(np.linspace(hz_to_mel(fmin, scale), hz_to_mel(fmax, scale),
                                n_mels + 2), scale)
    return pts[1:-1]


def mel_filterbank(sr: int, n_fft: int, n_mels: int, fmin: float, fmax: float,
                   scale: str = "slaney", norm: Optional[str] = "slaney") -> np.ndarray:
    """Triangular Mel filter matrix of shape (n_mels, 1 + n_fft // 2).

    Triangles are linear in Hz with mel-spaced corners. `norm="slaney"`
    divides each filter by half its bandwidth (approximate area
    normalization); `norm=None` keeps unit peaks.
    """
    fft_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sr)
    pts = mel_to_hz(np.linspace(hz_to_mel(fmin, scale), hz_to_mel(fmax, scale),
                                n_mels + 2), scale)
    lower = pts[:-2][:, None]
    center = pts[1:-1][:, None]
    upper = pts[2:][:, None]
    up = (fft_freqs[None, :] - lower) / np.maximum(center - lower, 1e-30)
    down = (upper - fft_freqs[None, :]) / np.maximum(upper - center, 1e-30)
    weights = np.maximum(0.0, np.minimum(up, down))
    if norm == "slaney":
        weights *= (2.0 / (upper - lower))
    elif norm is not None:
        raise ValueError(f"unknown filter norm: {norm!r}")
    return weights


def stft_power(x: np.ndarray, n_fft: int, win_length: int, hop: int) -> np.ndarray:
    """Power spectrogram (1 + n_fft//2, frames) of centered, reflect-padded
    frames under a periodic Hann window."""
    if len(x) < 1:
        raise EmptyInputError("cannot transform an empty signal")
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win_length) / win_length)
    if win_length < n_fft:
        padded = np.zeros(n_fft)
        off = (n_fft - win_length) // 2
        padded[off:off + win_length] = window
        window = padded
    pad = n_fft // 2
    x = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (len(x) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * window[None, :]
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


# ---------------------------------------------------------------------------
# Mel-spectrograms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MelSpectrogram:
    """Log-power Mel image; `positional` holds the per-bin constant channel
    (row i carries i / (n_mels - 1)) and is None on the detector path."""

    values: np.ndarray
    positional: Optional[np.ndarray]
    sample_rate: int
    hop_seconds: float

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def as_tensor(self) -> np.ndarray:
        """Stacked (channels, n_mels, frames) array for model input."""
        if self.positional is None:
            return self.values[None, :, :]
        return np.stack([self.values, self.positional])


def _positional_channel(n_mels: int, n_frames: int) -> np.ndarray:
    ramp = np.arange(n_mels, dtype=np.float64) / (n_mels - 1)
    return np.repeat(ramp[:, None], n_frames, axis=1)


def mel_spectrogram(clip: AudioClip, scale: str = "slaney",
                    norm: Optional[str] = "slaney") -> MelSpectrogram:
    """Two-channel classifier Mel-spectrogram of a 48 kHz clip."""
    if clip.sample_rate != CLASSIFIER_SR:
        raise ValueError(
            f"classifier spectrogram expects {CLASSIFIER_SR} Hz input, "
            f"got {clip.sample_rate}")
    if len(clip.samples) == 0:
        raise EmptyInputError("cannot transform an empty clip")
    if len(clip.samples) < CLASSIFIER_WIN:
        raise TooShortError(
            f"clip of {len(clip.samples)} samples is shorter than one "
            f"{CLASSIFIER_WIN}-sample analysis frame")
    power = stft_power(clip.samples, CLASSIFIER_FFT, CLASSIFIER_WIN, CLASSIFIER_HOP)
    fb = mel_filterbank(CLASSIFIER_SR, CLASSIFIER_FFT, CLASSIFIER_N_MELS,
                        CLASSIFIER_FMIN, CLASSIFIER_FMAX, scale, norm)
    values = np.log(np.maximum(fb @ power, LOG_FLOOR))
    return MelSpectrogram(
        values=values,
        positional=_positional_channel(CLASSIFIER_N_MELS, values.shape[1]),
        sample_rate=CLASSIFIER_SR,
        hop_seconds=CLASSIFIER_HOP / CLASSIFIER_SR,
    )


def fit_time_axis(spec: MelSpectrogram, target_frames: int,
                  mode: str = "deterministic",
                  rng: Optional[np.random.Generator] = None) -> MelSpectrogram:
    """Crop or cyclically replicate along time to exactly `target_frames`.

    Deterministic mode center-crops / replicates from offset zero; random
    mode draws a uniform crop position or replication offset from `rng`.
    """
    if target_frames <= 0:
        raise ValueError("target_frames must be positive")
    if spec.n_frames == 0:
        raise EmptyInputError("cannot fit an empty spectrogram")
    if mode not in ("deterministic", "random"):
        raise ValueError(f"unknown fit mode: {mode!r}")
    if mode == "random" and rng is None:
        rng = np.random.default_rng()
    t = spec.n_frames
    if t == target_frames:
        return spec
    if t > target_frames:
        start = ((t - target_frames) // 2 if mode == "deterministic"
                 else int(rng.integers(0, t - target_frames + 1)))
        cols = np.arange(start, start + target_frames)
    else:
        offset = 0 if mode == "deterministic" else int(rng.integers(0, t))
        cols = (np.arange(target_frames) + offset) % t
    return MelSpectrogram(
        values=spec.values[:, cols],
        positional=(None if spec.positional is None
                    else spec.positional[:, cols]),
        sample_rate=spec.sample_rate,
        hop_seconds=spec.hop_seconds,
    )


def detector_spectrogram(clip: AudioClip, scale: str = "slaney",
                         norm: Optional[str] = "slaney") -> MelSpectrogram:
    """Single-channel 128x512 gate spectrogram.

    The clip is peak-normalized (silence passes through as zeros),
    resampled to 8 kHz, zero-padded to at least 2 s, transformed with a
    743-sample FFT window and hop 186, then center-fitted to 512 frames.
    """
    if len(clip.samples) == 0:
        raise EmptyInputError("cannot gate an empty clip")
    if clip.peak() > 0.0:
        clip = peak_normalize(clip)
    clip = resample(clip, DETECTOR_SR)
    x = clip.samples
    min_len = int(DETECTOR_PAD_SECONDS * DETECTOR_SR)
    if len(x) < min_len:
        x = np.concatenate([x, np.zeros(min_len - len(x))])
    power = stft_power(x, DETECTOR_FFT, DETECTOR_FFT, DETECTOR_HOP)
    fb = mel_filterbank(DETECTOR_SR, DETECTOR_FFT, DETECTOR_N_MELS,
                        0.0, DETECTOR_SR / 2.0, scale, norm)
    values = np.log(np.maximum(fb @ power, LOG_FLOOR))
    spec = MelSpectrogram(values=values, positional=None,
                          sample_rate=DETECTOR_SR,
                          hop_seconds=DETECTOR_HOP / DETECTOR_SR)
    return fit_time_axis(spec, DETECTOR_TARGET_FRAMES, mode="deterministic")


# ---------------------------------------------------------------------------
# Cochleagram
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cochleagram:
    """Gammatone filterbank output: one row per channel, one column per
    input sample. Values are float32; center frequencies ascend."""

    values: np.ndarray
    center_frequencies: np.ndarray


def erb_bandwidth(f):
    """Equivalent rectangular bandwidth (Hz) of the auditory filter at f."""
    return 24.7 * (4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


def erb_space(fmin: float, fmax: float, n: int) -> np.ndarray:
    """n center frequencies equally spaced on the ERB-number scale."""
    def scale(f):
        return 21.4 * np.log10(4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)

    def inverse(e):
        return (10.0 ** (e / 21.4) - 1.0) * 1000.0 / 4.37

    return inverse(np.linspace(scale(fmin), scale(fmax), n))


def gammatone_sections(sr: int, cf: float):
    """Coefficients of the 4th-order gammatone at `cf` as four cascaded
    biquads sharing their poles, with first-order numerators.

    Pole radius exp(-2*pi*1.019*ERB(cf)/sr); the numerator zeros follow the
    classic all-pole gammatone construction. The first section is scaled so
    the cascade has exactly unit magnitude response at cf (the gain is
    evaluated numerically from the transfer function, which keeps the
    sine-at-center-frequency response at 1 by construction).
    """
    T = 1.0 / sr
    B = ERB_Q_FACTOR * 2.0 * np.pi * float(erb_bandwidth(cf))
    theta = 2.0 * np.pi * cf * T
    pole_r = math.exp(-B * T)
    b1 = -2.0 * pole_r * math.cos(theta)
    b2 = pole_r * pole_r
    sq_plus = math.sqrt(3.0 + 2.0 ** 1.5)
    sq_minus = math.sqrt(3.0 - 2.0 ** 1.5)
    co, si = math.cos(theta), math.sin(theta)
    a1s = np.array([
        -(2.0 * T * co * pole_r + 2.0 * sq_plus * T * si * pole_r) / 2.0,
        -(2.0 * T * co * pole_r - 2.0 * sq_plus * T * si * pole_r) / 2.0,
        -(2.0 * T * co * pole_r + 2.0 * sq_minus * T * si * pole_r) / 2.0,
        -(2.0 * T * co * pole_r - 2.0 * sq_minus * T * si * pole_r) / 2.0,
    ])
    z = complex(math.cos(theta), math.sin(theta))
    h = complex(1.0, 0.0)
    for a1 in a1s:
        h *= (T + a1 / z) / (1.0 + b1 / z + b2 / (z * z))
    gain = abs(h)
    a0s = np.full(4, T)
    a0s[0] /= gain
    a1s = a1s.copy()
    a1s[0] /= gain
    return a0s, a1s, b1, b2


def _bank_coefficients(sr: int, cfs: np.ndarray):
    n = len(cfs)
    a0 = np.empty((GAMMATONE_ORDER, n))
    a1 = np.empty((GAMMATONE_ORDER, n))
    b1 = np.empty(n)
    b2 = np.empty(n)
    for i, cf in enumerate(cfs):
        a0[:, i], a1[:, i], b1[i], b2[i] = gammatone_sections(sr, cf)
    return a0, a1, b1, b2


def cochleagram(clip: AudioClip, n_bins: int = N_COCHLEA_BINS,
                fmin: float = COCHLEA_FMIN,
                fmax_factor: float = COCHLEA_FMAX_FACTOR) -> Cochleagram:
    """Linear (unrectified) gammatone filterbank output of the clip."""
    if len(clip.samples) == 0:
        raise EmptyInputError("cannot transform an empty clip")
    cfs = erb_space(fmin, fmax_factor * clip.sample_rate, n_bins)
    a0, a1, b1, b2 = _bank_coefficients(clip.sample_rate, cfs)
    out = _kernels.bank_filter(np.ascontiguousarray(clip.samples, dtype=np.float64),
                               a0, a1, b1, b2)
    return Cochleagram(values=out, center_frequencies=cfs)


# ---------------------------------------------------------------------------
# Per-bin statistics and the assembled feature vector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinStatistics:
    mean: float
    median: float
    std: float
    skew: float
    kurtosis: float
    min: float
    max: float
    q1: float
    q3: float
    iqr: float
    l2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mean, self.median, self.std, self.skew,
                         self.kurtosis, self.min, self.max, self.q1,
                         self.q3, self.iqr, self.l2])


def bin_statistics(row) -> BinStatistics:
    """The 11 per-bin statistics under the package conventions.

    Population moments (divide by n); skew = m3 / m2^1.5 and excess
    kurtosis = m4 / m2^2 - 3, both 0 for zero variance; quartiles by
    linear interpolation between closest ranks.
    """
    x = np.asarray(row, dtype=np.float64)
    if x.ndim != 1 or len(x) == 0:
        raise EmptyInputError("bin statistics need a non-empty 1-D row")
    mean = float(x.mean())
    d = x - mean
    m2 = float(np.mean(d * d))
    m3 = float(np.mean(d * d * d))
    m4 = float(np.mean(d * d * d * d))
    if m2 > 0.0:
        skew = m3 / m2 ** 1.5
        kurt = m4 / (m2 * m2) - 3.0
    else:
        skew = 0.0
        kurt = 0.0
    q1, med, q3 = np.percentile(x, [25.0, 50.0, 75.0])
    return BinStatistics(
        mean=mean, median=float(med), std=math.sqrt(m2), skew=skew,
        kurtosis=kurt, min=float(x.min()), max=float(x.max()),
        q1=float(q1), q3=float(q3), iqr=float(q3 - q1),
        l2=float(np.linalg.norm(x)),
    )


def _quartile_ranks(n: int):
    klo = np.empty(3, dtype=np.int64)
    khi = np.empty(3, dtype=np.int64)
    frac = np.empty(3)
    for q, share in enumerate((0.25, 0.5, 0.75)):
        pos = (n - 1) * share
        klo[q] = int(math.floor(pos))
        khi[q] = int(math.ceil(pos))
        frac[q] = pos - klo[q]
    return klo, khi, frac


def matrix_bin_statistics(values: np.ndarray) -> np.ndarray:
    """Row-wise 11 statistics of a float32 matrix, (rows, 11) float64.

    Fast path used on cochleagram output; agrees with `bin_statistics`
    applied per row (the rank statistics are selected exactly via radix
    select on the float32 bit patterns, moments accumulate in float64).
    """
    x32 = np.ascontiguousarray(values, dtype=np.float32)
    if x32.ndim != 2 or x32.shape[1] == 0:
        raise EmptyInputError("matrix statistics need a non-empty 2-D matrix")
    nr, n = x32.shape
    moments = _kernels.matrix_moment_stats(x32)  # mean std skew kurt min max l2
    klo, khi, frac = _quartile_ranks(n)
    rank_keys = _kernels.matrix_rank_stats(x32.view(np.uint32), klo, khi)
    qlo = _kernels.monotone_keys_to_float32(rank_keys[:, :, 0]).astype(np.float64)
    qhi = _kernels.monotone_keys_to_float32(rank_keys[:, :, 1]).astype(np.float64)
    quart = qlo + frac[None, :] * (qhi - qlo)
    out = np.empty((nr, N_STATISTICS))
    out[:, 0] = moments[:, 0]   # mean
    out[:, 1] = quart[:, 1]     # median
    out[:, 2] = moments[:, 1]   # std
    out[:, 3] = moments[:, 2]   # skew
    out[:, 4] = moments[:, 3]   # kurtosis
    out[:, 5] = moments[:, 4]   # min
    out[:, 6] = moments[:, 5]   # max
    out[:, 7] = quart[:, 0]     # q1
    out[:, 8] = quart[:, 2]     # q3
    out[:, 9] = quart[:, 2] - quart[:, 0]
    out[:, 10] = moments[:, 6]  # l2
    return out


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (EMBEDDING_DIM,):
            raise ContractError(
                f"embedding must have exactly {EMBEDDING_DIM} values, "
                f"got shape {v.shape}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class FeatureVector:
    """1356 values: bin-major statistics block then the embedding block."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (FEATURE_VECTOR_LEN,):
            raise ContractError(
                f"feature vector must have exactly {FEATURE_VECTOR_LEN} "
                f"values, got shape {v.shape}")
        object.__setattr__(self, "values", v)


def assemble_feature_vector(coch: Cochleagram, emb: EmbeddingVector) -> FeatureVector:
    """Flatten per-bin statistics bin-major and append the embedding.

    Element 11*k + j is statistic j of bin k (order: mean, median, std,
    skew, kurtosis, min, max, q1, q3, iqr, l2); elements 1100..1355 are
    the embedding.
    """
    if coch.values.shape[0] != N_COCHLEA_BINS:
        raise ContractError(
            f"expected {N_COCHLEA_BINS} cochlear bins, got {coch.values.shape[0]}")
    stats = matrix_bin_statistics(coch.values)
    return FeatureVector(values=np.concatenate([stats.ravel(), emb.values]))


class EmbeddingProvider(Protocol):
    """Adapter contract for external embedding networks."""

    identifier: str
    thread_safe: bool

    def frame_embeddings(self, clip: AudioClip) -> np.ndarray:
        """Per-frame embeddings, shape (n_frames, width)."""
        ...


def embed(clip: AudioClip, provider: EmbeddingProvider) -> EmbeddingVector:
    """Aggregate a provider's per-frame outputs into a fixed 256-vector by
    concatenating the per-dimension mean and population standard deviation."""
    frames = np.asarray(provider.frame_embeddings(clip), dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ContractError(
            f"provider {provider.identifier!r} must emit a non-empty "
            f"(frames, width) array, got shape {frames.shape}")
    if 2 * frames.shape[1] != EMBEDDING_DIM:
        raise ContractError(
            f"provider {provider.identifier!r} emits width {frames.shape[1]}, "
            f"expected {EMBEDDING_DIM // 2}")
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    return EmbeddingVector(values=np.concatenate([mean, std]))


# ---------------------------------------------------------------------------
# Feature dumps (golden-file format)
# ---------------------------------------------------------------------------

def feature_config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def dump_features(path, array: np.ndarray, sample_rate: int, config: dict) -> None:
    """Write `array` as column-major float64 binary plus a JSON sidecar
    (shape, dtype, byte order, sample rate, config hash)."""
    path = Path(path)
    arr = np.asarray(array, dtype=np.float64)
    path.write_bytes(arr.tobytes(order="F"))
    meta = {
        "shape": list(arr.shape),
        "dtype": "float64",
        "order": "F",
        "byteorder": "little",
        "sample_rate": sample_rate,
        "config_hash": feature_config_hash(config),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))


def load_features(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype=np.float64)
    arr = arr.reshape(meta["shape"], order="F")
    return arr, meta
