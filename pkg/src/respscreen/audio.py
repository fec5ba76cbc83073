"""Audio decoding and canonicalization.

Turns encoded audio into a mono float waveform and provides the
resample / trim / normalize steps every downstream feature extractor
relies on. All functions are pure; clips are treated as immutable.
"""

from __future__ import annotations

import io
import math
import wave
from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly

from .errors import DecodeError, DegenerateInputError, EmptyInputError

TRIM_FRAME = 2048
TRIM_HOP = 512
TRIM_THRESHOLD_DB = -60.0


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self.samples) else 0.0


def load_clip(data: bytes, hint: str = "wav") -> AudioClip:
    """Decode an audio container into a mono clip at its native rate.

    Only uncompressed PCM WAV (8/16/24/32-bit) is supported. Multi-channel
    audio is averaged to mono. Raises DecodeError on malformed input and
    EmptyInputError when the container holds zero frames.
    """
    if hint.lower() not in ("wav", "wave"):
        raise DecodeError(f"unsupported container kind: {hint!r}")
    try:
        with wave.open(io.BytesIO(data), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            sample_rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError, ValueError) as exc:
        raise DecodeError(f"not a decodable PCM WAV stream: {exc}") from exc
    if n_frames == 0 or not raw:
        raise EmptyInputError("audio container holds no frames")
    if sample_rate <= 0 or n_channels <= 0:
        raise DecodeError("corrupt WAV header")

    if sampwidth == 1:
        x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif sampwidth == 2:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif sampwidth == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        i32 = (
            b[:, 0].astype(np.int32)
            | (b[:, 1].astype(np.int32) << 8)
            | (b[:, 2].astype(np.int32) << 16)
        )
        i32 = np.where(i32 >= 1 << 23, i32 - (1 << 24), i32)
        x = i32.astype(np.float64) / float(1 << 23)
    elif sampwidth == 4:
        x = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    else:
        raise DecodeError(f"unsupported sample width: {sampwidth} bytes")

    usable = (len(x) // n_channels) * n_channels
    x = x[:usable].reshape(-1, n_channels).mean(axis=1)
    if len(x) == 0:
        raise EmptyInputError("audio container holds no complete frames")
    return AudioClip(samples=x, sample_rate=sample_rate)


def resample(clip: AudioClip, target_sr: int) -> AudioClip:
    """Band-limited polyphase resampling to `target_sr`.

    Identity (same object contents) when the rate already matches, so
    repeated resampling to a fixed rate is exact.
    """
    if target_sr <= 0:
        raise ValueError(f"target_sr must be positive, got {target_sr}")
    if clip.sample_rate == target_sr:
        return clip
    g = math.gcd(clip.sample_rate, target_sr)
    up, down = target_sr // g, clip.sample_rate // g
    out = resample_poly(clip.samples, up, down)
    return AudioClip(samples=out, sample_rate=target_sr)


def trim_silence(clip: AudioClip, threshold_db: float = TRIM_THRESHOLD_DB) -> AudioClip:
    """Drop leading/trailing frames whose RMS is below `threshold_db`
    relative to the clip peak. Interior samples are never modified.

    Frames are 2048 samples with a 512 hop. Raises EmptyInputError when
    nothing exceeds the threshold (fully silent clip); the caller decides
    how to treat the rejection.
    """
    if threshold_db >= 0:
        raise ValueError("threshold_db must be negative (relative to peak)")
    x = clip.samples
    if len(x) == 0:
        raise EmptyInputError("cannot trim an empty clip")
    peak = clip.peak()
    if peak == 0.0:
        raise EmptyInputError("clip is fully silent")
    threshold = peak * 10.0 ** (threshold_db / 20.0)

    # frames tile the whole clip (the last ones may be partial) so no tail
    # sample escapes the scan
    frames = [(s, min(s + TRIM_FRAME, len(x)))
              for s in range(0, len(x), TRIM_HOP)]
    rms = np.array([np.sqrt(np.mean(x[a:b] ** 2)) for a, b in frames])
    keep = np.flatnonzero(rms >= threshold)
    if len(keep) == 0:
        raise EmptyInputError("clip is fully silent at this threshold")
    lo = frames[keep[0]][0]
    hi = frames[keep[-1]][1]
    return AudioClip(samples=x[lo:hi], sample_rate=clip.sample_rate)


def peak_normalize(clip: AudioClip) -> AudioClip:
    """Scale so the peak absolute amplitude is exactly 1."""
    peak = clip.peak()
    if peak == 0.0:
        raise DegenerateInputError("cannot peak-normalize an all-zero clip")
    if peak == 1.0:
        return clip
    return AudioClip(samples=clip.samples / peak, sample_rate=clip.sample_rate)


def canonicalize(clip: AudioClip, target_sr: int = 48000,
                 trim_db: float = TRIM_THRESHOLD_DB) -> AudioClip:
    """Full chain: resample -> trim silence -> peak normalize."""
    return peak_normalize(trim_silence(resample(clip, target_sr), trim_db))
