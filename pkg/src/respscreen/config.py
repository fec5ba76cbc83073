"""Service configuration and the immutable model registry.

Model sources are URIs: "stub:<p>" yields a constant-probability stand-in
(handy for tests and smoke deployments), anything else is a filesystem
path — JSON documents for tree bundles and the logistic model, a portable
interchange file for neural networks. Environment variables of the form
RESPSCREEN_<FIELD> override file values.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .audio import AudioClip, canonicalize
from .errors import ConfigError, ModelLoadError
from .features import (
    CLASSIFIER_N_MELS,
    CLASSIFIER_SR,
    CLASSIFIER_TARGET_FRAMES,
    DETECTOR_N_MELS,
    DETECTOR_TARGET_FRAMES,
)
from .models import (
    BaggedEnsemble,
    ExternalModelHandle,
    LogisticModel,
    OnnxExternalModel,
    StubEmbeddingProvider,
    StubExternalModel,
    StubProbabilityModel,
    load_logistic,
    load_tree_ensemble,
)
from .screening import GATE_THRESHOLD, UNCERTAIN_HIGH, UNCERTAIN_LOW, StackingWeights

DETECTOR_INPUT_SHAPE = (1, DETECTOR_N_MELS, DETECTOR_TARGET_FRAMES)
CLASSIFIER_INPUT_SHAPE = (2, CLASSIFIER_N_MELS, CLASSIFIER_TARGET_FRAMES)

MAX_UPLOAD_BYTES = 10 * 1024 * 1024
MAX_UPLOAD_SECONDS = 30.0


class _LockedHandle(ExternalModelHandle):
    """Serializes access to a handle that is not thread-safe."""

    def __init__(self, inner: ExternalModelHandle):
        super().__init__(identifier=inner.identifier,
                         input_shape=inner.input_shape,
                         activation=inner.activation, thread_safe=True)
        self._inner = inner
        self._guard = threading.Lock()

    def _run_raw(self, tensor: np.ndarray) -> float:
        with self._guard:
            return self._inner._run_raw(tensor)


class _LockedEmbedder:
    def __init__(self, inner):
        self.identifier = inner.identifier
        self.thread_safe = True
        self._inner = inner
        self._guard = threading.Lock()

    def frame_embeddings(self, clip):
        with self._guard:
            return self._inner.frame_embeddings(clip)


@dataclass
class ModelRegistry:
    """Every model the pipeline can reach; immutable after construction.
    Handles that declare themselves non-thread-safe are wrapped with a
    lock so pipeline branches may run concurrently."""

    detector: Optional[ExternalModelHandle] = None
    dcnn: Optional[BaggedEnsemble] = None
    gb_cough: Optional[BaggedEnsemble] = None
    gb_breath: Optional[BaggedEnsemble] = None
    gb_voice: Optional[BaggedEnsemble] = None
    symptoms: Optional[LogisticModel] = None
    embedder: Optional[object] = None
    canonical_sr: int = CLASSIFIER_SR

    def __post_init__(self):
        if self.detector is not None and not self.detector.thread_safe:
            self.detector = _LockedHandle(self.detector)
        if self.embedder is not None and not getattr(self.embedder, "thread_safe", True):
            self.embedder = _LockedEmbedder(self.embedder)

    def canonicalize(self, clip: AudioClip) -> AudioClip:
        return canonicalize(clip, target_sr=self.canonical_sr)

    def require(self, names) -> None:
        missing = [name for name in names if getattr(self, name) is None]
        if missing:
            raise ConfigError(f"model registry is missing {missing}")


def _external_handle(uri: str, identifier: str, shape) -> ExternalModelHandle:
    if uri.startswith("stub:"):
        return StubExternalModel(identifier, float(uri[5:]), shape)
    return OnnxExternalModel(identifier, uri, shape)


def _tree_bundle(uri: str, kind: str) -> BaggedEnsemble:
    if uri.startswith("stub:"):
        p = float(uri[5:])
        members = tuple(
            StubProbabilityModel(f"{kind}-stub-{i}", p) for i in range(10))
        return BaggedEnsemble(members=members, kind=kind)
    doc = json.loads(Path(uri).read_text())
    if not isinstance(doc, dict) or "members" not in doc:
        raise ModelLoadError(f"{uri}: bundle document needs a 'members' list")
    members = tuple(load_tree_ensemble(m) for m in doc["members"])
    return BaggedEnsemble(members=members, kind=doc.get("kind", kind))


def _dcnn_bundle(uris, kind: str = "spectrogram") -> BaggedEnsemble:
    members = tuple(
        _external_handle(uri, f"{kind}-{i}", CLASSIFIER_INPUT_SHAPE)
        for i, uri in enumerate(uris))
    return BaggedEnsemble(members=members, kind=kind)


@dataclass
class ServiceConfig:
    """Deployable-service settings; see README for the JSON schema."""

    detector: str = "stub:0.5"
    dcnn: tuple = ()
    gb_cough: Optional[str] = "stub:0.5"
    gb_breath: Optional[str] = "stub:0.5"
    gb_voice: Optional[str] = "stub:0.5"
    logistic: Optional[str] = None
    embedder: str = "stub:zeros"
    weights: str | tuple = "variant2"
    symptom_weight: float = 0.0
    gate_threshold: float = GATE_THRESHOLD
    uncertain_low: float = UNCERTAIN_LOW
    uncertain_high: float = UNCERTAIN_HIGH
    storage_path: str = "submissions.ndjson"
    listen_address: str = "127.0.0.1:8000"
    admin_token: Optional[str] = None
    max_upload_bytes: int = MAX_UPLOAD_BYTES
    max_upload_seconds: float = MAX_UPLOAD_SECONDS

    def __post_init__(self):
        for name in ("gate_threshold", "uncertain_low", "uncertain_high"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v!r}")
        if self.uncertain_low > self.uncertain_high:
            raise ConfigError("uncertainty band low exceeds high")
        if not 0.0 <= self.symptom_weight <= 1.0:
            raise ConfigError("symptom_weight must lie in [0, 1]")
        for name in ("detector", "gb_cough", "gb_breath", "gb_voice", "logistic"):
            uri = getattr(self, name)
            if uri and not uri.startswith("stub:") and not Path(uri).exists():
                raise ConfigError(f"{name} model file not found: {uri}")
        for uri in self.dcnn:
            if not uri.startswith("stub:") and not Path(uri).exists():
                raise ConfigError(f"dcnn model file not found: {uri}")

    @classmethod
    def from_file(cls, path, env: Optional[dict] = None) -> "ServiceConfig":
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(doc, env)

    @classmethod
    def from_dict(cls, doc: dict, env: Optional[dict] = None) -> "ServiceConfig":
        env = dict(os.environ if env is None else env)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        merged = dict(doc)
        for name in known:
            override = env.get(f"RESPSCREEN_{name.upper()}")
            if override is None:
                continue
            current = cls.__dataclass_fields__[name]
            if current.type in ("float",):
                merged[name] = float(override)
            elif name == "max_upload_bytes":
                merged[name] = int(override)
            elif name in ("dcnn",):
                merged[name] = tuple(s for s in override.split(",") if s)
            else:
                merged[name] = override
        if isinstance(merged.get("dcnn"), list):
            merged["dcnn"] = tuple(merged["dcnn"])
        if isinstance(merged.get("weights"), list):
            merged["weights"] = tuple(merged["weights"])
        return cls(**merged)

    def stacking_weights(self) -> StackingWeights:
        if isinstance(self.weights, str):
            return StackingWeights.preset(self.weights)
        return StackingWeights(*self.weights)

    def build_registry(self) -> ModelRegistry:
        detector = _external_handle(self.detector, "gate-detector",
                                    DETECTOR_INPUT_SHAPE)
        dcnn = _dcnn_bundle(self.dcnn) if self.dcnn else None
        registry = ModelRegistry(
            detector=detector,
            dcnn=dcnn,
            gb_cough=_tree_bundle(self.gb_cough, "cough") if self.gb_cough else None,
            gb_breath=_tree_bundle(self.gb_breath, "breath") if self.gb_breath else None,
            gb_voice=_tree_bundle(self.gb_voice, "voice") if self.gb_voice else None,
            symptoms=load_logistic(self.logistic) if self.logistic else None,
            embedder=_stub_embedder(self.embedder),
        )
        return registry


def _stub_embedder(uri: str):
    if uri == "stub:zeros":
        return StubEmbeddingProvider()
    if uri.startswith("stub:"):
        value = float(uri[5:])
        return StubEmbeddingProvider(frames=np.full((1, 128), value))
    raise ConfigError(
        f"embedding provider {uri!r} is not supported; register a provider "
        f"programmatically or use a stub: URI")
