"""Probability-emitting models: portable tree-ensemble evaluation, bagged
averaging, the symptom logistic classifier, and adapters for external
neural networks (gate detector, spectrogram classifier, embedding nets).

Tree-ensemble documents are JSON:

    {"feature_count": int, "base_score": float,
     "trees": [{"nodes": [{"feature": i, "threshold": t,
                           "left": a, "right": b} | {"leaf": v}, ...]}, ...]}

Node 0 is the root. The split rule is strict: go left iff
feature value < threshold (features are dense; no missing values).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DegenerateTrainingError, ModelLoadError
from .features import MelSpectrogram

SYMPTOM_ORDER = (
    "diarrhoea", "dyspnoea", "sore_throat", "cough", "rash",
    "fatigue", "fever", "anosmia", "dry_tongue",
)
N_SYMPTOMS = len(SYMPTOM_ORDER)

BAGGED_ENSEMBLE_SIZE = 10

LOGISTIC_STEP_SIZE = 0.1
LOGISTIC_L2 = 1e-3
LOGISTIC_GRAD_TOL = 1e-8
LOGISTIC_MAX_ITER = 50_000


def sigmoid(z: float) -> float:
    """Numerically stable logistic function."""
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# Gradient-boosted tree inference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreeNode:
    # internal node when leaf is None
    leaf: Optional[float] = None
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.leaf is not None


@dataclass(frozen=True)
class Tree:
    nodes: tuple[TreeNode, ...]


@dataclass(frozen=True)
class TreeEnsembleModel:
    trees: tuple[Tree, ...]
    base_score: float
    feature_count: int

    def predict_proba(self, x: np.ndarray) -> float:
        return eval_tree_ensemble(self, x)


def _validate_tree(tree_index: int, nodes: Sequence[dict], feature_count: int) -> Tree:
    where = f"trees[{tree_index}]"
    if not nodes:
        raise ModelLoadError(f"{where}: a tree needs at least one node")
    parsed = []
    for ni, node in enumerate(nodes):
        loc = f"{where}.nodes[{ni}]"
        if not isinstance(node, dict):
            raise ModelLoadError(f"{loc}: node must be an object")
        if "leaf" in node:
            extra = set(node) - {"leaf"}
            if extra:
                raise ModelLoadError(f"{loc}: unexpected leaf fields {sorted(extra)}")
            parsed.append(TreeNode(leaf=float(node["leaf"])))
            continue
        required = {"feature", "threshold", "left", "right"}
        if set(node) != required:
            raise ModelLoadError(
                f"{loc}: internal node needs exactly fields {sorted(required)}")
        feat = int(node["feature"])
        if not 0 <= feat < feature_count:
            raise ModelLoadError(
                f"{loc}: feature index {feat} out of range [0, {feature_count})")
        parsed.append(TreeNode(feature=feat, threshold=float(node["threshold"]),
                               left=int(node["left"]), right=int(node["right"])))
    # walk from the root: children must be in range and visited at most once
    seen = set()
    stack = [(0, "root")]
    saw_leaf = False
    while stack:
        idx, path = stack.pop()
        if not 0 <= idx < len(parsed):
            raise ModelLoadError(f"{where}: child index {idx} out of range at {path}")
        if idx in seen:
            raise ModelLoadError(f"{where}: cycle through node {idx} at {path}")
        seen.add(idx)
        node = parsed[idx]
        if node.is_leaf:
            saw_leaf = True
        else:
            stack.append((node.left, f"{path}.left"))
            stack.append((node.right, f"{path}.right"))
    if not saw_leaf:
        raise ModelLoadError(f"{where}: no reachable leaf")
    return Tree(nodes=tuple(parsed))


def load_tree_ensemble(document) -> TreeEnsembleModel:
    """Validate a model document (dict, JSON string, or path) into a
    TreeEnsembleModel. Errors name the offending node."""
    if isinstance(document, (str, Path)) and not str(document).lstrip().startswith("{"):
        document = json.loads(Path(document).read_text())
    elif isinstance(document, (str, bytes)):
        document = json.loads(document)
    if not isinstance(document, dict):
        raise ModelLoadError("model document must be a JSON object")
    missing = {"feature_count", "base_score", "trees"} - set(document)
    if missing:
        raise ModelLoadError(f"model document missing fields {sorted(missing)}")
    feature_count = int(document["feature_count"])
    if feature_count <= 0:
        raise ModelLoadError("feature_count must be positive")
    trees = tuple(
        _validate_tree(ti, spec.get("nodes", []), feature_count)
        for ti, spec in enumerate(document["trees"])
    )
    return TreeEnsembleModel(trees=trees, base_score=float(document["base_score"]),
                             feature_count=feature_count)


def save_tree_ensemble(model: TreeEnsembleModel) -> dict:
    """Inverse of load_tree_ensemble (structural round-trip)."""
    trees = []
    for tree in model.trees:
        nodes = []
        for node in tree.nodes:
            if node.is_leaf:
                nodes.append({"leaf": node.leaf})
            else:
                nodes.append({"feature": node.feature, "threshold": node.threshold,
                              "left": node.left, "right": node.right})
        trees.append({"nodes": nodes})
    return {"feature_count": model.feature_count, "base_score": model.base_score,
            "trees": trees}


def eval_tree_ensemble(model: TreeEnsembleModel, x) -> float:
    """sigmoid(base_score + sum of reached leaf scores)."""
    values = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if values.shape != (model.feature_count,):
        raise ContractError(
            f"input length {values.shape} does not match feature_count "
            f"{model.feature_count}")
    margin = model.base_score
    for tree in model.trees:
        node = tree.nodes[0]
        while not node.is_leaf:
            node = tree.nodes[node.left if values[node.feature] < node.threshold
                              else node.right]
        margin += node.leaf
    return sigmoid(margin)


# ---------------------------------------------------------------------------
# Bagged ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BaggedEnsemble:
    """Mean of member probabilities. A deployment bundle carries exactly
    10 members; other sizes are accepted with a warning for fixtures."""

    members: tuple
    kind: str

    def __post_init__(self):
        if len(self.members) == 0:
            raise ModelLoadError("a bagged ensemble needs at least one member")
        if len(self.members) != BAGGED_ENSEMBLE_SIZE:
            warnings.warn(
                f"{self.kind} bundle has {len(self.members)} members; "
                f"deployment bundles carry {BAGGED_ENSEMBLE_SIZE}",
                stacklevel=3)

    def predict_proba(self, model_input) -> float:
        return bagged_predict(self, model_input)


def bagged_predict(ensemble: BaggedEnsemble, model_input) -> float:
    probs = []
    for mi, member in enumerate(ensemble.members):
        try:
            probs.append(member.predict_proba(model_input))
        except Exception as exc:
            raise ContractError(
                f"{ensemble.kind} ensemble member {mi} failed: {exc}") from exc
    return float(np.mean(probs))


# ---------------------------------------------------------------------------
# Symptom logistic model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float
    symptom_order: tuple = SYMPTOM_ORDER

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (N_SYMPTOMS,):
            raise ModelLoadError(
                f"logistic model needs {N_SYMPTOMS} weights, got {w.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "symptom_order", tuple(self.symptom_order))

    def predict_proba(self, bitmap) -> float:
        return predict_logistic(self, bitmap)


def predict_logistic(model: LogisticModel, symptoms) -> float:
    x = np.asarray(symptoms, dtype=np.float64)
    if x.shape != (N_SYMPTOMS,):
        raise ContractError(
            f"symptom bitmap must have length {N_SYMPTOMS}, got {x.shape}")
    return sigmoid(model.bias + float(model.weights @ x))


def train_logistic(records, step_size: float = LOGISTIC_STEP_SIZE,
                   l2: float = LOGISTIC_L2, tol: float = LOGISTIC_GRAD_TOL,
                   max_iter: int = LOGISTIC_MAX_ITER) -> LogisticModel:
    """Deterministic full-batch gradient descent on the L2-regularized
    mean log-loss (bias unregularized), run to gradient-norm `tol` or the
    iteration cap."""
    x = np.array([np.asarray(r[0], dtype=np.float64) for r in records])
    y = np.array([float(r[1]) for r in records])
    if x.ndim != 2 or x.shape[1] != N_SYMPTOMS:
        raise ContractError(f"records must carry {N_SYMPTOMS}-bit symptom bitmaps")
    if len(np.unique(y)) < 2:
        raise DegenerateTrainingError("training needs at least one record per class")
    n = len(y)
    w = np.zeros(N_SYMPTOMS)
    b = 0.0
    for _ in range(max_iter):
        z = x @ w + b
        p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                     np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        grad_w = x.T @ (p - y) / n + l2 * w
        grad_b = float(np.mean(p - y))
        gnorm = math.sqrt(float(grad_w @ grad_w) + grad_b * grad_b)
        if gnorm <= tol:
            break
        w -= step_size * grad_w
        b -= step_size * grad_b
    return LogisticModel(weights=w, bias=b)


def logistic_loss(model: LogisticModel, records, l2: float = LOGISTIC_L2) -> float:
    """Regularized mean log-loss (the objective train_logistic descends)."""
    x = np.array([np.asarray(r[0], dtype=np.float64) for r in records])
    y = np.array([float(r[1]) for r in records])
    z = x @ model.weights + model.bias
    # log(1 + exp(-|z|)) + max(z, 0) - z*y is the stable log-loss form
    nll = np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0.0) - z * y
    return float(np.mean(nll) + 0.5 * l2 * float(model.weights @ model.weights))


def load_logistic(document) -> LogisticModel:
    if isinstance(document, (str, Path)) and not str(document).lstrip().startswith("{"):
        document = json.loads(Path(document).read_text())
    elif isinstance(document, (str, bytes)):
        document = json.loads(document)
    missing = {"weights", "bias"} - set(document)
    if missing:
        raise ModelLoadError(f"logistic document missing fields {sorted(missing)}")
    order = tuple(document.get("symptom_order", SYMPTOM_ORDER))
    if order != SYMPTOM_ORDER:
        raise ModelLoadError(
            f"symptom_order must be {list(SYMPTOM_ORDER)}, got {list(order)}")
    return LogisticModel(weights=np.asarray(document["weights"], dtype=np.float64),
                         bias=float(document["bias"]))


def save_logistic(model: LogisticModel) -> dict:
    return {"weights": list(model.weights), "bias": model.bias,
            "symptom_order": list(model.symptom_order)}


# ---------------------------------------------------------------------------
# External model adapters
# ---------------------------------------------------------------------------

@dataclass
class ExternalModelHandle:
    """Contract wrapper for an external network emitting one probability.

    `input_shape` is (channels, n_mels, frames); `activation` is "none"
    when the artifact already emits a probability, "sigmoid" when it
    emits a logit. Concrete handles implement `_run_raw`.
    """

    identifier: str
    input_shape: tuple
    activation: str = "none"
    thread_safe: bool = True

    def _run_raw(self, tensor: np.ndarray) -> float:
        raise NotImplementedError

    def predict_proba(self, spec: MelSpectrogram) -> float:
        return run_external_model(self, spec)


class StubExternalModel(ExternalModelHandle):
    """Constant- or callable-backed stand-in used in tests, fixtures, and
    stub-configured deployments. Counts its invocations."""

    def __init__(self, identifier: str, fn: Callable[[np.ndarray], float] | float,
                 input_shape: tuple, activation: str = "none"):
        super().__init__(identifier=identifier, input_shape=tuple(input_shape),
                         activation=activation)
        self._fn = fn if callable(fn) else (lambda _tensor, v=float(fn): v)
        self.calls = 0

    def _run_raw(self, tensor: np.ndarray) -> float:
        self.calls += 1
        return float(self._fn(tensor))


class UnloadedExternalModel(ExternalModelHandle):
    """Placeholder for a configured-but-missing artifact."""

    def __init__(self, identifier: str, input_shape: tuple, reason: str):
        super().__init__(identifier=identifier, input_shape=tuple(input_shape))
        self.reason = reason

    def _run_raw(self, tensor: np.ndarray) -> float:
        raise ModelLoadError(f"model {self.identifier!r} is not loaded: {self.reason}")


class OnnxExternalModel(ExternalModelHandle):
    """Runs a network from a portable interchange file via onnxruntime
    (imported lazily; the runtime is an optional extra)."""

    def __init__(self, identifier: str, path, input_shape: tuple,
                 activation: str = "sigmoid"):
        super().__init__(identifier=identifier, input_shape=tuple(input_shape),
                         activation=activation, thread_safe=False)
        path = Path(path)
        if not path.exists():
            raise ModelLoadError(f"model artifact not found: {path}")
        try:
            import onnxruntime  # noqa: PLC0415
        except ImportError as exc:
            raise ModelLoadError(
                "onnxruntime is required to run interchange-format models") from exc
        self._session = onnxruntime.InferenceSession(str(path))
        self._input_name = self._session.get_inputs()[0].name

    def _run_raw(self, tensor: np.ndarray) -> float:
        out = self._session.run(None, {
            self._input_name: tensor[None, ...].astype(np.float32)})
        return float(np.asarray(out[0]).ravel()[0])


def run_external_model(handle: ExternalModelHandle, spec: MelSpectrogram) -> float:
    """Shape-check the tensor, run the handle, apply its activation, and
    verify the probability contract."""
    tensor = spec.as_tensor()
    if tensor.shape != handle.input_shape:
        raise ContractError(
            f"model {handle.identifier!r} expects input shape "
            f"{handle.input_shape}, got {tensor.shape}")
    try:
        raw = handle._run_raw(tensor)
    except ModelLoadError:
        raise
    except Exception as exc:
        raise ContractError(
            f"model {handle.identifier!r} failed at inference: {exc}") from exc
    prob = sigmoid(raw) if handle.activation == "sigmoid" else raw
    if not (0.0 <= prob <= 1.0) or math.isnan(prob):
        raise ContractError(
            f"model {handle.identifier!r} emitted {prob!r}, not a probability")
    return float(prob)


class StubProbabilityModel:
    """Bare probability model returning a constant or callable result for
    any input; used as a bagged-ensemble member in tests and stub configs."""

    def __init__(self, identifier: str, fn: Callable | float):
        self.identifier = identifier
        self._fn = fn if callable(fn) else (lambda _x, v=float(fn): v)
        self.calls = 0

    def predict_proba(self, model_input) -> float:
        self.calls += 1
        return float(self._fn(model_input))


class StubEmbeddingProvider:
    """Embedding provider emitting fixed or callable per-frame vectors."""

    def __init__(self, identifier: str = "stub-embedder", frames=None,
                 fn: Optional[Callable] = None, thread_safe: bool = True):
        self.identifier = identifier
        self.thread_safe = thread_safe
        self._frames = frames
        self._fn = fn
        self.calls = 0

    def frame_embeddings(self, clip) -> np.ndarray:
        self.calls += 1
        if self._fn is not None:
            return np.asarray(self._fn(clip), dtype=np.float64)
        if self._frames is not None:
            return np.asarray(self._frames, dtype=np.float64)
        return np.zeros((1, 128))
