import json
import math

import numpy as np
import pytest

from respscreen.errors import (
    ContractError,
    DegenerateTrainingError,
    ModelLoadError,
)
from respscreen.features import MelSpectrogram
from respscreen.models import (
    SYMPTOM_ORDER,
    BaggedEnsemble,
    LogisticModel,
    StubExternalModel,
    StubProbabilityModel,
    UnloadedExternalModel,
    bagged_predict,
    eval_tree_ensemble,
    load_logistic,
    load_tree_ensemble,
    logistic_loss,
    predict_logistic,
    run_external_model,
    save_logistic,
    save_tree_ensemble,
    train_logistic,
)


def oracle_sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def oracle_eval(document, x):
    """Independent recursive evaluation of a tree-ensemble document."""

    def walk(nodes, idx):
        node = nodes[idx]
        if "leaf" in node:
            return node["leaf"]
        child = node["left"] if x[node["feature"]] < node["threshold"] else node["right"]
        return walk(nodes, child)

    margin = document["base_score"]
    for tree in document["trees"]:
        margin += walk(tree["nodes"], 0)
    return oracle_sigmoid(margin)


def random_tree_document(rng, feature_count, max_depth=4):
    """Random binary tree in document form (list of nodes, root first)."""
    nodes = []

    def grow(depth):
        idx = len(nodes)
        if depth >= max_depth or rng.random() < 0.3:
            nodes.append({"leaf": float(rng.normal())})
            return idx
        nodes.append(None)
        placeholder = {"feature": int(rng.integers(0, feature_count)),
                       "threshold": float(rng.normal())}
        left = grow(depth + 1)
        right = grow(depth + 1)
        placeholder.update({"left": left, "right": right})
        nodes[idx] = placeholder
        return idx

    grow(0)
    return {"nodes": nodes}


def random_model_document(rng, feature_count):
    return {
        "feature_count": feature_count,
        "base_score": float(rng.normal()),
        "trees": [random_tree_document(rng, feature_count)
                  for _ in range(int(rng.integers(1, 6)))],
    }


class TestLoadTreeEnsemble:
    def test_minimal_empty_model(self):
        model = load_tree_ensemble(
            {"trees": [], "base_score": 0.0, "feature_count": 1356})
        assert model.feature_count == 1356
        assert model.trees == ()

    def test_feature_index_out_of_range(self):
        doc = {"feature_count": 1356, "base_score": 0.0,
               "trees": [{"nodes": [
                   {"feature": 2000, "threshold": 0.5, "left": 1, "right": 2},
                   {"leaf": 1.0}, {"leaf": -1.0}]}]}
        with pytest.raises(ModelLoadError, match="feature index 2000"):
            load_tree_ensemble(doc)

    def test_cycle_detected_with_path(self):
        doc = {"feature_count": 4, "base_score": 0.0,
               "trees": [{"nodes": [
                   {"feature": 0, "threshold": 0.5, "left": 0, "right": 1},
                   {"leaf": 1.0}]}]}
        with pytest.raises(ModelLoadError, match="cycle"):
            load_tree_ensemble(doc)

    def test_child_out_of_range(self):
        doc = {"feature_count": 4, "base_score": 0.0,
               "trees": [{"nodes": [
                   {"feature": 0, "threshold": 0.5, "left": 5, "right": 1},
                   {"leaf": 1.0}]}]}
        with pytest.raises(ModelLoadError, match="out of range"):
            load_tree_ensemble(doc)

    def test_roundtrip_save_load(self, rng):
        doc = random_model_document(rng, 20)
        model = load_tree_ensemble(doc)
        again = load_tree_ensemble(save_tree_ensemble(model))
        assert again == model

    def test_json_string_accepted(self):
        text = json.dumps({"trees": [], "base_score": 0.25, "feature_count": 3})
        assert load_tree_ensemble(text).base_score == 0.25


class TestEvalTreeEnsemble:
    def test_empty_model_is_half(self):
        model = load_tree_ensemble(
            {"trees": [], "base_score": 0.0, "feature_count": 4})
        assert eval_tree_ensemble(model, np.zeros(4)) == 0.5

    def test_single_stump_closed_form(self):
        doc = {"feature_count": 8, "base_score": 0.0,
               "trees": [{"nodes": [
                   {"feature": 3, "threshold": 0.5, "left": 1, "right": 2},
                   {"leaf": -1.0}, {"leaf": 2.0}]}]}
        model = load_tree_ensemble(doc)
        x = np.zeros(8)
        x[3] = 0.2
        assert eval_tree_ensemble(model, x) == pytest.approx(
            1.0 / (1.0 + math.exp(1.0)))
        assert eval_tree_ensemble(model, x) == pytest.approx(0.26894, abs=1e-5)
        x[3] = 0.5  # boundary goes right (strict less-than)
        assert eval_tree_ensemble(model, x) == pytest.approx(
            1.0 / (1.0 + math.exp(-2.0)))

    def test_matches_recursive_oracle_on_random_models(self, rng):
        for _ in range(1000):
            feature_count = int(rng.integers(1, 12))
            doc = random_model_document(rng, feature_count)
            model = load_tree_ensemble(doc)
            x = rng.normal(size=feature_count)
            assert eval_tree_ensemble(model, x) == oracle_eval(doc, x)

    def test_monotone_in_base_score(self, rng):
        doc = random_model_document(rng, 5)
        x = rng.normal(size=5)
        lo = load_tree_ensemble({**doc, "base_score": -1.0})
        hi = load_tree_ensemble({**doc, "base_score": 2.0})
        assert eval_tree_ensemble(lo, x) < eval_tree_ensemble(hi, x)

    def test_length_mismatch(self):
        model = load_tree_ensemble(
            {"trees": [], "base_score": 0.0, "feature_count": 4})
        with pytest.raises(ContractError):
            eval_tree_ensemble(model, np.zeros(5))


class TestBaggedEnsemble:
    def test_constant_members_return_constant(self):
        with pytest.warns(UserWarning):
            ens = BaggedEnsemble(members=tuple(
                StubProbabilityModel(f"m{i}", 0.7) for i in range(3)), kind="cough")
        assert bagged_predict(ens, None) == pytest.approx(0.7)

    def test_two_member_mean(self):
        with pytest.warns(UserWarning):
            ens = BaggedEnsemble(members=(StubProbabilityModel("a", 0.2),
                                          StubProbabilityModel("b", 0.4)),
                                 kind="cough")
        assert bagged_predict(ens, None) == pytest.approx(0.3)

    def test_ten_members_no_warning(self, recwarn):
        ens = BaggedEnsemble(members=tuple(
            StubProbabilityModel(f"m{i}", 0.5) for i in range(10)), kind="breath")
        assert len(recwarn) == 0
        assert bagged_predict(ens, None) == 0.5

    def test_member_failure_names_member(self):
        def boom(_):
            raise RuntimeError("exploded")

        with pytest.warns(UserWarning):
            ens = BaggedEnsemble(members=(StubProbabilityModel("ok", 0.5),
                                          StubProbabilityModel("bad", boom)),
                                 kind="voice")
        with pytest.raises(ContractError, match="member 1"):
            bagged_predict(ens, None)

    def test_output_within_member_range(self, rng):
        for _ in range(50):
            vals = rng.random(10)
            ens = BaggedEnsemble(members=tuple(
                StubProbabilityModel(f"m{i}", float(v))
                for i, v in enumerate(vals)), kind="cough")
            p = bagged_predict(ens, None)
            assert vals.min() - 1e-12 <= p <= vals.max() + 1e-12


class TestLogistic:
    def test_zero_model_predicts_half(self):
        model = LogisticModel(weights=np.zeros(9), bias=0.0)
        assert predict_logistic(model, np.zeros(9)) == 0.5

    def test_one_hot_fever_closed_form(self):
        weights = np.zeros(9)
        weights[SYMPTOM_ORDER.index("fever")] = 2.0
        model = LogisticModel(weights=weights, bias=-1.0)
        bitmap = np.zeros(9)
        bitmap[SYMPTOM_ORDER.index("fever")] = 1.0
        assert predict_logistic(model, bitmap) == pytest.approx(
            1.0 / (1.0 + math.exp(-1.0)))
        assert predict_logistic(model, bitmap) == pytest.approx(0.73106, abs=1e-5)

    def test_wrong_length_rejected(self):
        model = LogisticModel(weights=np.zeros(9), bias=0.0)
        with pytest.raises(ContractError):
            predict_logistic(model, np.zeros(8))

    def test_symptom_order_is_fixed(self):
        assert SYMPTOM_ORDER == ("diarrhoea", "dyspnoea", "sore_throat",
                                 "cough", "rash", "fatigue", "fever",
                                 "anosmia", "dry_tongue")

    def test_separable_on_cough_reaches_full_accuracy(self, rng):
        cough = SYMPTOM_ORDER.index("cough")
        records = []
        for _ in range(60):
            bitmap = (rng.random(9) < 0.4).astype(float)
            records.append((bitmap, int(bitmap[cough])))
        model = train_logistic(records)
        for bitmap, label in records:
            assert (predict_logistic(model, bitmap) >= 0.5) == bool(label)

    def test_zero_iterations_predicts_half(self):
        records = [(np.ones(9), 1), (np.zeros(9), 0)]
        model = train_logistic(records, max_iter=0)
        assert predict_logistic(model, np.ones(9)) == 0.5

    def test_class_symmetric_data_stays_at_half(self, rng):
        bitmaps = [(rng.random(9) < 0.5).astype(float) for _ in range(8)]
        records = [(b, 0) for b in bitmaps] + [(b, 1) for b in bitmaps]
        model = train_logistic(records)
        for b in bitmaps:
            assert predict_logistic(model, b) == pytest.approx(0.5, abs=1e-6)

    def test_single_class_is_degenerate(self):
        with pytest.raises(DegenerateTrainingError):
            train_logistic([(np.zeros(9), 1), (np.ones(9), 1)])

    def test_loss_non_increasing_over_training(self, rng):
        records = [((rng.random(9) < 0.5).astype(float), int(rng.random() < 0.5))
                   for _ in range(40)]
        losses = []
        for iters in (0, 1, 5, 25, 125, 625):
            model = train_logistic(records, max_iter=iters)
            losses.append(logistic_loss(model, records))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_monotone_in_positive_weight_symptom(self, rng):
        cough = SYMPTOM_ORDER.index("cough")
        records = []
        for _ in range(80):
            bitmap = (rng.random(9) < 0.4).astype(float)
            label = int(rng.random() < (0.2 + 0.7 * bitmap[cough]))
            records.append((bitmap, label))
        model = train_logistic(records, max_iter=2000)
        assert model.weights[cough] > 0
        without = np.zeros(9)
        with_cough = without.copy()
        with_cough[cough] = 1.0
        assert (predict_logistic(model, with_cough)
                > predict_logistic(model, without))

    def test_document_roundtrip(self):
        model = LogisticModel(weights=np.linspace(-1, 1, 9), bias=0.3)
        again = load_logistic(save_logistic(model))
        assert np.array_equal(again.weights, model.weights)
        assert again.bias == model.bias

    def test_bad_symptom_order_rejected(self):
        doc = save_logistic(LogisticModel(weights=np.zeros(9), bias=0.0))
        doc["symptom_order"] = list(reversed(doc["symptom_order"]))
        with pytest.raises(ModelLoadError):
            load_logistic(doc)


def _spec(shape=(1, 128, 512)):
    values = np.zeros(shape[1:])
    return MelSpectrogram(values=values, positional=None if shape[0] == 1
                          else values.copy(), sample_rate=8000,
                          hop_seconds=0.02325)


class TestExternalModels:
    def test_stub_returns_constant(self):
        handle = StubExternalModel("stub", 0.7, (1, 128, 512))
        assert run_external_model(handle, _spec()) == 0.7
        assert handle.calls == 1

    def test_shape_mismatch_is_contract_error(self):
        handle = StubExternalModel("stub", 0.7, (1, 128, 512))
        bad = MelSpectrogram(values=np.zeros((128, 511)), positional=None,
                             sample_rate=8000, hop_seconds=0.02325)
        with pytest.raises(ContractError, match="shape"):
            run_external_model(handle, bad)

    def test_unloaded_handle_is_load_error(self):
        handle = UnloadedExternalModel("ghost", (1, 128, 512), "file missing")
        with pytest.raises(ModelLoadError):
            run_external_model(handle, _spec())

    def test_sigmoid_activation_applied(self):
        handle = StubExternalModel("logit-stub", 0.0, (1, 128, 512),
                                   activation="sigmoid")
        assert run_external_model(handle, _spec()) == 0.5

    def test_out_of_range_output_rejected(self):
        handle = StubExternalModel("broken", 1.7, (1, 128, 512))
        with pytest.raises(ContractError, match="probability"):
            run_external_model(handle, _spec())

    def test_runtime_failure_propagates_identifier(self):
        def boom(_):
            raise RuntimeError("backend crash")

        handle = StubExternalModel("fragile", boom, (1, 128, 512))
        with pytest.raises(ContractError, match="fragile"):
            run_external_model(handle, _spec())
