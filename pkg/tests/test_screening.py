import numpy as np
import pytest

from respscreen.audio import AudioClip
from respscreen.config import ModelRegistry
from respscreen.errors import ConfigError, UndefinedStackError
from respscreen.models import (
    BaggedEnsemble,
    LogisticModel,
    StubEmbeddingProvider,
    StubProbabilityModel,
)
from respscreen.screening import (
    DISCLAIMER,
    NEGATIVE_SCREEN,
    POSITIVE_SCREEN,
    UNCERTAIN,
    ComponentProbabilities,
    SessionInputs,
    StackingWeights,
    gate_recording,
    run_full_pipeline,
    screening_verdict,
    stack_probabilities,
)

from conftest import constant_detector, sine_clip


def bundle(p, kind="cough", fn=None):
    members = tuple(StubProbabilityModel(f"{kind}-{i}", fn if fn else p)
                    for i in range(10))
    return BaggedEnsemble(members=members, kind=kind)


def stub_registry(detector=0.9, dcnn=0.5, gb=0.5, gb_breath=0.5, gb_voice=0.5,
                  symptoms=None):
    return ModelRegistry(
        detector=constant_detector(detector),
        dcnn=bundle(dcnn, "spectrogram"),
        gb_cough=bundle(gb, "cough"),
        gb_breath=bundle(gb_breath, "breath"),
        gb_voice=bundle(gb_voice, "voice"),
        symptoms=symptoms,
        embedder=StubEmbeddingProvider(),
    )


class TestStackingWeights:
    def test_table_presets_load_and_sum_to_one(self):
        v1 = StackingWeights.preset("variant1")
        assert v1.as_tuple() == (0.02, 0.412, 0.284, 0.284)
        v2 = StackingWeights.preset("variant2")
        assert v2.as_tuple() == (0.20, 0.656, 0.0, 0.144)
        for w in (v1, v2):
            assert sum(w.as_tuple()) == pytest.approx(1.0, abs=1e-9)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            StackingWeights.preset("variant3")

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            StackingWeights(-0.1, 0.6, 0.3, 0.2)

    def test_sum_enforced(self):
        with pytest.raises(ValueError):
            StackingWeights(0.3, 0.3, 0.3, 0.3)


class TestGate:
    def test_boundary_quarter_accepts(self):
        decision = gate_recording(sine_clip(440, 0.5, 8000),
                                  constant_detector(0.25))
        assert decision.accepted is True

    def test_just_below_boundary_rejects(self):
        decision = gate_recording(sine_clip(440, 0.5, 8000),
                                  constant_detector(0.24))
        assert decision.accepted is False

    def test_high_score_accepts(self):
        decision = gate_recording(sine_clip(440, 0.5, 8000),
                                  constant_detector(0.90))
        assert decision.accepted is True

    def test_silent_clip_inaudible_without_detector_call(self):
        detector = constant_detector(0.99)
        decision = gate_recording(
            AudioClip(samples=np.zeros(4000), sample_rate=8000), detector)
        assert decision.accepted is False
        assert decision.reason == "inaudible"
        assert detector.calls == 0

    def test_accepted_iff_score_at_least_threshold(self, rng):
        for _ in range(50):
            score = float(rng.random())
            threshold = float(rng.random())
            decision = gate_recording(sine_clip(440, 0.5, 8000),
                                      constant_detector(score), threshold)
            assert decision.accepted == (score >= threshold)


class TestStacking:
    def test_equal_components_any_weights(self):
        p = ComponentProbabilities(0.7, 0.7, 0.7, 0.7)
        for preset in ("variant1", "variant2"):
            w = StackingWeights.preset(preset)
            assert stack_probabilities(p, w, renormalize_missing=True) == \
                pytest.approx(0.7)

    def test_variant2_with_breath_absent(self):
        p = ComponentProbabilities(p_dcnn=0.5, p_gb=0.5, p_gb_breath=None,
                                   p_gb_voice=0.5)
        w = StackingWeights.preset("variant2")
        # breath weight is already 0 in variant II: no renormalization needed
        assert stack_probabilities(p, w) == pytest.approx(0.5)

    def test_variant1_one_hot_dcnn(self):
        p = ComponentProbabilities(1.0, 0.0, 0.0, 0.0)
        w = StackingWeights.preset("variant1")
        assert stack_probabilities(p, w) == pytest.approx(0.02)

    def test_missing_positive_weight_component_raises(self):
        p = ComponentProbabilities(p_dcnn=0.5, p_gb=None, p_gb_breath=0.5,
                                   p_gb_voice=0.5)
        with pytest.raises(UndefinedStackError):
            stack_probabilities(p, StackingWeights.preset("variant1"))

    def test_renormalization_over_missing(self):
        p = ComponentProbabilities(p_dcnn=0.8, p_gb=0.4, p_gb_breath=None,
                                   p_gb_voice=None)
        w = StackingWeights.preset("variant1")  # t=0.02 x=0.412
        got = stack_probabilities(p, w, renormalize_missing=True)
        assert got == pytest.approx((0.02 * 0.8 + 0.412 * 0.4) / (0.02 + 0.412))

    def test_all_effective_weights_zero(self):
        p = ComponentProbabilities(None, None, None, None)
        with pytest.raises(UndefinedStackError):
            stack_probabilities(p, StackingWeights.preset("variant2"),
                                renormalize_missing=True)

    def test_hand_computed_weighted_sums(self, rng):
        for _ in range(100):
            comps = rng.random(4)
            raw = rng.random(4) + 0.01
            w = StackingWeights(*(raw / raw.sum()))
            expected = (w.t * comps[0] + w.x * comps[1] + w.y * comps[2]
                        + w.z * comps[3])
            got = stack_probabilities(ComponentProbabilities(*comps), w)
            assert got == pytest.approx(expected, abs=1e-12)

    def test_convexity(self, rng):
        for _ in range(200):
            comps = rng.random(4)
            raw = rng.random(4)
            total = raw.sum()
            if total == 0:
                continue
            w = StackingWeights(*(raw / total))
            got = stack_probabilities(ComponentProbabilities(*comps), w)
            assert comps.min() - 1e-12 <= got <= comps.max() + 1e-12

    def test_monotonicity_in_any_positive_weight_component(self, rng):
        for _ in range(100):
            comps = rng.random(4)
            raw = rng.random(4) + 0.05
            w = StackingWeights(*(raw / raw.sum()))
            base = stack_probabilities(ComponentProbabilities(*comps), w)
            idx = int(rng.integers(0, 4))
            bumped = comps.copy()
            bumped[idx] = min(1.0, bumped[idx] + 0.1)
            up = stack_probabilities(ComponentProbabilities(*bumped), w)
            assert up >= base - 1e-12


class TestVerdict:
    @pytest.mark.parametrize("p,band", [
        (0.50, UNCERTAIN),
        (0.45, UNCERTAIN),
        (0.55, UNCERTAIN),
        (0.4499, NEGATIVE_SCREEN),
        (0.5501, POSITIVE_SCREEN),
        (0.20, NEGATIVE_SCREEN),
        (0.95, POSITIVE_SCREEN),
        (0.0, NEGATIVE_SCREEN),
        (1.0, POSITIVE_SCREEN),
    ])
    def test_band_mapping(self, p, band):
        verdict = screening_verdict(p)
        assert verdict.band == band
        assert verdict.disclaimer == DISCLAIMER

    def test_total_on_unit_interval(self, rng):
        for p in np.concatenate([rng.random(500), [0.0, 1.0, 0.45, 0.55]]):
            verdict = screening_verdict(float(p))
            if p < 0.45:
                assert verdict.band == NEGATIVE_SCREEN
            elif p > 0.55:
                assert verdict.band == POSITIVE_SCREEN
            else:
                assert verdict.band == UNCERTAIN

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            screening_verdict(1.2)


class TestFullPipeline:
    def test_all_branches_half_is_uncertain(self):
        registry = stub_registry()
        result = run_full_pipeline(
            SessionInputs(cough=sine_clip(440, 0.5, 16000)),
            registry, StackingWeights.preset("variant1"))
        assert result.verdict is not None
        assert result.verdict.probability == pytest.approx(0.5)
        assert result.verdict.band == UNCERTAIN
        assert result.symptom_probability is None

    def test_gate_rejection_runs_no_branches(self):
        registry = stub_registry(detector=0.1)
        result = run_full_pipeline(
            SessionInputs(cough=sine_clip(440, 0.5, 16000)),
            registry, StackingWeights.preset("variant1"))
        assert result.verdict is None
        assert result.retry_prompt is True
        for ens in (registry.dcnn, registry.gb_cough, registry.gb_breath,
                    registry.gb_voice):
            assert all(m.calls == 0 for m in ens.members)
        assert registry.embedder.calls == 0

    def test_high_branches_positive_screen(self):
        registry = stub_registry(dcnn=0.9, gb=0.9, gb_breath=0.9, gb_voice=0.9)
        clip = sine_clip(300, 0.6, 16000)
        result = run_full_pipeline(
            SessionInputs(cough=clip, breath=clip, voice=clip),
            registry, StackingWeights.preset("variant1"))
        assert result.verdict.probability == pytest.approx(0.9)
        assert result.verdict.band == POSITIVE_SCREEN

    def test_absent_voice_renormalizes(self):
        registry = stub_registry(dcnn=0.8, gb=0.8, gb_breath=0.8, gb_voice=0.1)
        clip = sine_clip(300, 0.6, 16000)
        result = run_full_pipeline(
            SessionInputs(cough=clip, breath=clip),  # no voice recording
            registry, StackingWeights.preset("variant1"))
        assert result.branch_probabilities.p_gb_voice is None
        assert result.audio_probability == pytest.approx(0.8)

    def test_symptom_mixing(self):
        weights = np.zeros(9)
        symptoms_model = LogisticModel(weights=weights, bias=4.0)  # ~0.982
        registry = stub_registry(dcnn=0.4, gb=0.4, gb_breath=0.4, gb_voice=0.4,
                                 symptoms=symptoms_model)
        clip = sine_clip(300, 0.6, 16000)
        bitmap = np.zeros(9)
        result = run_full_pipeline(
            SessionInputs(cough=clip, breath=clip, voice=clip, symptoms=bitmap),
            registry, StackingWeights.preset("variant1"), symptom_weight=0.5)
        p_sym = 1.0 / (1.0 + np.exp(-4.0))
        assert result.symptom_probability == pytest.approx(p_sym)
        assert result.verdict.probability == pytest.approx(0.5 * 0.4 + 0.5 * p_sym)

    def test_symptom_weight_zero_reproduces_audio_only(self):
        symptoms_model = LogisticModel(weights=np.zeros(9), bias=4.0)
        registry = stub_registry(dcnn=0.3, gb=0.3, gb_breath=0.3, gb_voice=0.3,
                                 symptoms=symptoms_model)
        clip = sine_clip(300, 0.6, 16000)
        result = run_full_pipeline(
            SessionInputs(cough=clip, breath=clip, voice=clip,
                          symptoms=np.zeros(9)),
            registry, StackingWeights.preset("variant2"), symptom_weight=0.0)
        assert result.verdict.probability == pytest.approx(0.3)

    def test_missing_models_is_config_error(self):
        registry = ModelRegistry(detector=None, embedder=None)
        with pytest.raises(ConfigError):
            run_full_pipeline(SessionInputs(cough=sine_clip(440, 0.5, 16000)),
                              registry, StackingWeights.preset("variant1"))
