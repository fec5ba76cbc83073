"""End-to-end screening: quality-gate the cough, run every branch, stack
branch probabilities with configurable weights, mix in the symptom model,
and map the result to a verdict with the uncertainty band."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .audio import AudioClip
from .errors import ConfigError, UndefinedStackError
from .features import (
    CLASSIFIER_SR,
    CLASSIFIER_TARGET_FRAMES,
    assemble_feature_vector,
    cochleagram,
    detector_spectrogram,
    embed,
    fit_time_axis,
    mel_spectrogram,
)
from .models import ExternalModelHandle, predict_logistic, run_external_model

GATE_THRESHOLD = 0.25
UNCERTAIN_LOW = 0.45
UNCERTAIN_HIGH = 0.55

NEGATIVE_SCREEN = "negative-screen"
UNCERTAIN = "uncertain"
POSITIVE_SCREEN = "positive-screen"

DISCLAIMER = (
    "This screening tool is not a certified medical device and its output "
    "does not constitute medical advice. Regardless of the result, seek "
    "clinical testing or professional medical care for any health concern."
)

BRANCH_ORDER = ("dcnn", "gb", "gb_breath", "gb_voice")

WEIGHT_PRESETS = {
    "variant1": (0.02, 0.412, 0.284, 0.284),
    "variant2": (0.20, 0.656, 0.0, 0.144),
}


@dataclass(frozen=True)
class StackingWeights:
    """Convex weights for the DCNN, GB-cough, GB-breath, GB-voice branches."""

    t: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        vals = (self.t, self.x, self.y, self.z)
        if any(v < 0 for v in vals):
            raise ValueError(f"stacking weights must be non-negative, got {vals}")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"stacking weights must sum to 1, got {sum(vals)!r}")

    @classmethod
    def preset(cls, name: str) -> "StackingWeights":
        if name not in WEIGHT_PRESETS:
            raise ConfigError(
                f"unknown weight preset {name!r}; available: "
                f"{sorted(WEIGHT_PRESETS)}")
        return cls(*WEIGHT_PRESETS[name])

    def as_tuple(self) -> tuple:
        return (self.t, self.x, self.y, self.z)


@dataclass(frozen=True)
class ComponentProbabilities:
    """Branch outputs; None marks a branch that did not run."""

    p_dcnn: Optional[float] = None
    p_gb: Optional[float] = None
    p_gb_breath: Optional[float] = None
    p_gb_voice: Optional[float] = None

    def as_tuple(self) -> tuple:
        return (self.p_dcnn, self.p_gb, self.p_gb_breath, self.p_gb_voice)


@dataclass(frozen=True)
class GateDecision:
    score: float
    accepted: bool
    threshold: float
    reason: Optional[str] = None


@dataclass(frozen=True)
class Verdict:
    probability: float
    band: str
    disclaimer: str = DISCLAIMER


def gate_recording(clip: AudioClip, detector: ExternalModelHandle,
                   threshold: float = GATE_THRESHOLD) -> GateDecision:
    """Score the clip with the cough detector; accept iff score >= threshold.

    Silent or empty clips are rejected with reason "inaudible" without
    invoking the detector.
    """
    if len(clip.samples) == 0 or clip.peak() == 0.0:
        return GateDecision(score=0.0, accepted=False, threshold=threshold,
                            reason="inaudible")
    score = run_external_model(detector, detector_spectrogram(clip))
    return GateDecision(score=score, accepted=score >= threshold,
                        threshold=threshold)


def stack_probabilities(p: ComponentProbabilities, w: StackingWeights,
                        renormalize_missing: bool = False) -> float:
    """Weighted average of the branch probabilities.

    Every branch with positive weight must be present unless
    `renormalize_missing`, in which case weights of absent branches are
    zeroed and the remainder rescaled to sum 1.
    """
    probs = p.as_tuple()
    weights = list(w.as_tuple())
    for name, prob, weight in zip(BRANCH_ORDER, probs, weights):
        if prob is None and weight > 0.0 and not renormalize_missing:
            raise UndefinedStackError(
                f"branch {name!r} has weight {weight} but no probability; "
                f"pass renormalize_missing to rescale")
    effective = [0.0 if prob is None else weight
                 for prob, weight in zip(probs, weights)]
    total = sum(effective)
    if total <= 0.0:
        raise UndefinedStackError("all effective stacking weights are zero")
    return sum(weight * prob
               for weight, prob in zip(effective, probs)
               if prob is not None) / total


def screening_verdict(p: float) -> Verdict:
    """Map a probability to its band; [0.45, 0.55] is uncertain inclusive."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p!r}")
    if p < UNCERTAIN_LOW:
        band = NEGATIVE_SCREEN
    elif p > UNCERTAIN_HIGH:
        band = POSITIVE_SCREEN
    else:
        band = UNCERTAIN
    return Verdict(probability=p, band=band)


@dataclass(frozen=True)
class PipelineResult:
    gate: GateDecision
    verdict: Optional[Verdict]
    branch_probabilities: ComponentProbabilities
    audio_probability: Optional[float]
    symptom_probability: Optional[float]
    retry_prompt: bool

    @property
    def final_probability(self) -> Optional[float]:
        return self.verdict.probability if self.verdict else None


@dataclass
class SessionInputs:
    cough: AudioClip
    breath: Optional[AudioClip] = None
    voice: Optional[AudioClip] = None
    symptoms: Optional[np.ndarray] = None  # 9-bit bitmap, fixed symptom order


def _tree_branch_features(clip: AudioClip, registry) -> np.ndarray:
    clip48 = registry.canonicalize(clip)
    emb = embed(clip48, registry.embedder)
    return assemble_feature_vector(cochleagram(clip48), emb).values


def run_full_pipeline(inputs: SessionInputs, registry,
                      weights: StackingWeights,
                      symptom_weight: float = 0.0,
                      renormalize_missing: bool = True,
                      gate_threshold: float = GATE_THRESHOLD) -> PipelineResult:
    """Gate the cough, evaluate available branches once, stack, mix the
    symptom probability with weight `symptom_weight`, and emit the verdict.

    A gate rejection short-circuits: no branch is evaluated and the result
    carries a retry prompt instead of a verdict.
    """
    registry.require(("detector", "embedder"))
    gate = gate_recording(inputs.cough, registry.detector, gate_threshold)
    if not gate.accepted:
        return PipelineResult(gate=gate, verdict=None,
                              branch_probabilities=ComponentProbabilities(),
                              audio_probability=None, symptom_probability=None,
                              retry_prompt=True)

    p_dcnn = p_gb = p_gb_breath = p_gb_voice = None
    cough48 = registry.canonicalize(inputs.cough)
    if registry.dcnn is not None and weights.t > 0.0:
        spec = fit_time_axis(mel_spectrogram(cough48), CLASSIFIER_TARGET_FRAMES)
        p_dcnn = registry.dcnn.predict_proba(spec)
    if registry.gb_cough is not None and weights.x > 0.0:
        p_gb = registry.gb_cough.predict_proba(
            _tree_branch_features(inputs.cough, registry))
    if inputs.breath is not None and registry.gb_breath is not None and weights.y > 0.0:
        p_gb_breath = registry.gb_breath.predict_proba(
            _tree_branch_features(inputs.breath, registry))
    if inputs.voice is not None and registry.gb_voice is not None and weights.z > 0.0:
        p_gb_voice = registry.gb_voice.predict_proba(
            _tree_branch_features(inputs.voice, registry))

    components = ComponentProbabilities(p_dcnn=p_dcnn, p_gb=p_gb,
                                        p_gb_breath=p_gb_breath,
                                        p_gb_voice=p_gb_voice)
    p_audio = stack_probabilities(components, weights, renormalize_missing)

    p_symptoms = None
    s = 0.0
    if inputs.symptoms is not None and registry.symptoms is not None:
        p_symptoms = predict_logistic(registry.symptoms, inputs.symptoms)
        s = symptom_weight
    p_final = (1.0 - s) * p_audio + s * (p_symptoms if p_symptoms is not None else 0.0)

    return PipelineResult(gate=gate, verdict=screening_verdict(p_final),
                          branch_probabilities=components,
                          audio_probability=p_audio,
                          symptom_probability=p_symptoms,
                          retry_prompt=False)
