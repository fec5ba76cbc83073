import io
import math
import struct
import wave

import numpy as np
import pytest


def pytest_runtest_logreport(report):
    # one visible PASS/FAIL line per acceptance criterion
    if "test_acceptance" in report.nodeid and report.when == "call":
        name = report.nodeid.split("::")[-1].replace("test_", "", 1)
        status = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {name}: {status}", flush=True)

from respscreen.audio import AudioClip
from respscreen.config import DETECTOR_INPUT_SHAPE
from respscreen.models import StubExternalModel


def make_wav_bytes(samples, sample_rate=44100, sampwidth=2, channels=None):
    """Encode float samples (or a (n, ch) array) as PCM WAV bytes."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n_channels = channels or x.shape[1]
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(n_channels)
        wf.setsampwidth(sampwidth)
        wf.setframerate(sample_rate)
        if sampwidth == 2:
            ints = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2")
            wf.writeframes(ints.tobytes())
        elif sampwidth == 3:
            ints = np.clip(np.round(x * ((1 << 23) - 1)),
                           -(1 << 23), (1 << 23) - 1).astype(np.int32)
            raw = bytearray()
            for v in ints.ravel():
                raw += struct.pack("<i", int(v))[:3]
            wf.writeframes(bytes(raw))
        elif sampwidth == 1:
            ints = np.clip(np.round(x * 127.0) + 128, 0, 255).astype(np.uint8)
            wf.writeframes(ints.tobytes())
        elif sampwidth == 4:
            ints = np.clip(np.round(x * ((1 << 31) - 1)),
                           -(1 << 31), (1 << 31) - 1).astype("<i4")
            wf.writeframes(ints.tobytes())
        else:
            raise ValueError(sampwidth)
    return buf.getvalue()


def sine_clip(freq, duration, sr, amplitude=0.8):
    t = np.arange(int(round(duration * sr))) / sr
    return AudioClip(samples=amplitude * np.sin(2 * np.pi * freq * t),
                     sample_rate=sr)


def sine_wav(freq, duration, sr, amplitude=0.8, sampwidth=2):
    clip = sine_clip(freq, duration, sr, amplitude)
    return make_wav_bytes(clip.samples, sr, sampwidth)


def constant_detector(score):
    return StubExternalModel("stub-detector", score, DETECTOR_INPUT_SHAPE)


def dft_peak_hz(samples, sr):
    """Frequency of the dominant DFT bin (test oracle)."""
    spectrum = np.abs(np.fft.rfft(samples))
    spectrum[0] = 0.0
    return np.fft.rfftfreq(len(samples), d=1.0 / sr)[int(np.argmax(spectrum))]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def synthetic_gated_log(rng, records=10_000, rejection=0.10, rerecord=0.40,
                        success=0.70):
    """Gated-submission log with planted analytics rates.

    Built from four episode shapes on distinct devices, with exact quotas
    so that rejection rate, re-recorded fraction, and sequence success
    fraction land on the planted values by construction:

      A: reject then accept within the window   (successful sequence)
      B: reject then reject, nothing after      (unsuccessful sequence)
      C: lone accepted recording
      D: lone rejected recording (not re-recorded)

    Episode order and inter-record gaps are randomized.
    """
    from datetime import datetime, timedelta, timezone

    from respscreen.screening import GateDecision
    from respscreen.sessions import SubmissionRecord

    n_rejected = round(records * rejection)
    n_rerecorded = round(n_rejected * rerecord)
    n_a = round(n_rerecorded * success)
    n_b = n_rerecorded - n_a
    n_d = n_rejected - n_a - 2 * n_b
    n_c = records - 2 * n_a - 2 * n_b - n_d
    if min(n_a, n_b, n_c, n_d) < 0:
        raise ValueError("planted rates are infeasible for this record count")

    t0 = datetime(2021, 5, 10, tzinfo=timezone.utc)

    def record(device, minute, accepted):
        return SubmissionRecord(
            device_id=device, timestamp=t0 + timedelta(minutes=minute),
            recording_kind="cough",
            gate=GateDecision(score=0.8 if accepted else 0.1, accepted=accepted,
                              threshold=0.25))

    shapes = (["A"] * n_a + ["B"] * n_b + ["C"] * n_c + ["D"] * n_d)
    order = rng.permutation(len(shapes))
    log = []
    for i, idx in enumerate(order):
        shape = shapes[idx]
        device = f"dev{i}"
        minute = 60.0 * i
        gap = float(rng.uniform(1.0, 19.0))
        if shape == "A":
            log.append(record(device, minute, False))
            log.append(record(device, minute + gap, True))
        elif shape == "B":
            log.append(record(device, minute, False))
            log.append(record(device, minute + gap, False))
        elif shape == "C":
            log.append(record(device, minute, True))
        else:
            log.append(record(device, minute, False))
    return log


def reference_statistics(row):
    """Independent high-precision oracle for the 11 per-bin statistics.

    Pure Python with math.fsum accumulation and closest-rank interpolation
    for quartiles; conventions: population moments, zero-variance skew and
    kurtosis are 0.
    """
    xs = [float(v) for v in row]
    n = len(xs)
    mean = math.fsum(xs) / n
    m2 = math.fsum((v - mean) ** 2 for v in xs) / n
    m3 = math.fsum((v - mean) ** 3 for v in xs) / n
    m4 = math.fsum((v - mean) ** 4 for v in xs) / n
    skew = m3 / m2 ** 1.5 if m2 > 0 else 0.0
    kurt = m4 / (m2 * m2) - 3.0 if m2 > 0 else 0.0
    srt = sorted(xs)

    def quantile(q):
        pos = (n - 1) * q
        lo = math.floor(pos)
        hi = math.ceil(pos)
        return srt[lo] + (pos - lo) * (srt[hi] - srt[lo])

    q1, med, q3 = quantile(0.25), quantile(0.5), quantile(0.75)
    return {
        "mean": mean, "median": med, "std": math.sqrt(m2), "skew": skew,
        "kurtosis": kurt, "min": srt[0], "max": srt[-1], "q1": q1, "q3": q3,
        "iqr": q3 - q1, "l2": math.sqrt(math.fsum(v * v for v in xs)),
    }
