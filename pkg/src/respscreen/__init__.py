"""Respiratory-audio screening pipeline.

Gate recordings for cough presence, extract spectral and cochlear
features, run the classifier ensembles plus the symptom model, stack
their probabilities, and serve verdicts with an uncertainty band —
together with the evaluation harness for metrics, fold planning, and
stacking-weight search.
"""

from .audio import AudioClip, canonicalize, load_clip, peak_normalize, resample, trim_silence
from .errors import RespScreenError
from .features import (
    BinStatistics,
    Cochleagram,
    EmbeddingVector,
    FeatureVector,
    MelSpectrogram,
    assemble_feature_vector,
    bin_statistics,
    cochleagram,
    detector_spectrogram,
    embed,
    fit_time_axis,
    mel_spectrogram,
)
from .models import (
    BaggedEnsemble,
    LogisticModel,
    TreeEnsembleModel,
    bagged_predict,
    eval_tree_ensemble,
    load_tree_ensemble,
    predict_logistic,
    train_logistic,
)
from .screening import (
    ComponentProbabilities,
    GateDecision,
    StackingWeights,
    Verdict,
    gate_recording,
    run_full_pipeline,
    screening_verdict,
    stack_probabilities,
)

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "load_clip", "resample", "trim_silence", "peak_normalize",
    "canonicalize", "RespScreenError",
    "MelSpectrogram", "Cochleagram", "BinStatistics", "FeatureVector",
    "EmbeddingVector", "mel_spectrogram", "fit_time_axis",
    "detector_spectrogram", "cochleagram", "bin_statistics",
    "assemble_feature_vector", "embed",
    "TreeEnsembleModel", "BaggedEnsemble", "LogisticModel",
    "load_tree_ensemble", "eval_tree_ensemble", "bagged_predict",
    "train_logistic", "predict_logistic",
    "StackingWeights", "ComponentProbabilities", "GateDecision", "Verdict",
    "gate_recording", "stack_probabilities", "screening_verdict",
    "run_full_pipeline",
]
