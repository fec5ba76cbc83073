"""Command-line entry points.

Subcommands: features, detect, screen, eval, gridsearch, analytics, serve.
Exit codes: 0 ok, 1 operational error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .audio import load_clip
from .config import DETECTOR_INPUT_SHAPE, ServiceConfig
from .errors import RespScreenError
from .evaluation import (
    DEFAULT_GRID_STEP,
    LabeledScores,
    grid_search_weights,
    kfold_plan,
    mcc_at_threshold,
    probability_histogram,
    roc_auc,
)
from .features import (
    CLASSIFIER_SR,
    assemble_feature_vector,
    cochleagram,
    dump_features,
    embed,
)
from .models import SYMPTOM_ORDER, StubEmbeddingProvider, StubExternalModel
from .screening import BRANCH_ORDER, StackingWeights, gate_recording
from .sessions import SubmissionStore, load_manifest, rejection_rate, rerecording_analysis

FEATURE_CONFIG = {
    "canonical_sr": CLASSIFIER_SR,
    "cochlea_bins": 100,
    "statistics": 11,
    "embedding": 256,
}


def _read_clip(path: str):
    return load_clip(Path(path).read_bytes())


def _detector_from_uri(uri: str):
    if uri.startswith("stub:"):
        return StubExternalModel("gate-detector", float(uri[5:]),
                                 DETECTOR_INPUT_SHAPE)
    from .models import OnnxExternalModel
    return OnnxExternalModel("gate-detector", uri, DETECTOR_INPUT_SHAPE)


def cmd_features(args) -> int:
    from .audio import canonicalize
    clip = canonicalize(_read_clip(args.clip))
    emb = embed(clip, StubEmbeddingProvider())
    vector = assemble_feature_vector(cochleagram(clip), emb)
    out = Path(args.out or (Path(args.clip).stem + ".features.bin"))
    dump_features(out, vector.values, clip.sample_rate, FEATURE_CONFIG)
    print(json.dumps({"out": str(out), "length": len(vector.values)}))
    return 0


def cmd_detect(args) -> int:
    clip = _read_clip(args.clip)
    decision = gate_recording(clip, _detector_from_uri(args.model), args.threshold)
    print(json.dumps({"score": decision.score, "accepted": decision.accepted,
                      "threshold": decision.threshold, "reason": decision.reason}))
    return 0


def cmd_screen(args) -> int:
    from .screening import SessionInputs, run_full_pipeline

    config = (ServiceConfig.from_file(args.config) if args.config
              else ServiceConfig())
    registry = config.build_registry()
    symptoms = None
    if args.symptoms:
        names = [s.strip() for s in args.symptoms.split(",") if s.strip()]
        unknown = [n for n in names if n not in SYMPTOM_ORDER]
        if unknown:
            print(f"unknown symptoms {unknown}; allowed: {list(SYMPTOM_ORDER)}",
                  file=sys.stderr)
            return 2
        symptoms = np.array([1.0 if s in names else 0.0 for s in SYMPTOM_ORDER])
    weights = (StackingWeights.preset(args.weights)
               if args.weights in ("variant1", "variant2")
               else StackingWeights(*(float(v) for v in args.weights.split(","))))
    inputs = SessionInputs(
        cough=_read_clip(args.cough),
        breath=_read_clip(args.breath) if args.breath else None,
        voice=_read_clip(args.voice) if args.voice else None,
        symptoms=symptoms,
    )
    result = run_full_pipeline(inputs, registry, weights,
                               symptom_weight=config.symptom_weight,
                               gate_threshold=config.gate_threshold)
    payload = {
        "gate": {"score": result.gate.score, "accepted": result.gate.accepted,
                 "reason": result.gate.reason},
        "retry_prompt": result.retry_prompt,
    }
    if result.verdict is not None:
        payload["verdict"] = {"probability": result.verdict.probability,
                              "band": result.verdict.band,
                              "disclaimer": result.verdict.disclaimer}
        payload["branches"] = {
            "dcnn": result.branch_probabilities.p_dcnn,
            "gb": result.branch_probabilities.p_gb,
            "gb_breath": result.branch_probabilities.p_gb_breath,
            "gb_voice": result.branch_probabilities.p_gb_voice,
            "symptoms": result.symptom_probability,
        }
    print(json.dumps(payload))
    return 0


def _scores_for(entries, scheme: str) -> np.ndarray:
    if scheme == "oracle":
        return np.array([float(e.label) for e in entries])
    if scheme.startswith("constant:"):
        return np.full(len(entries), float(scheme.split(":", 1)[1]))
    if scheme.startswith("scores:"):
        table = {}
        with open(scheme.split(":", 1)[1]) as fh:
            for row in csv.DictReader(fh):
                table[row["path"]] = float(row["score"])
        missing = [e.path for e in entries if e.path not in table]
        if missing:
            raise RespScreenError(f"scores file lacks entries for {missing[:5]}")
        return np.array([table[e.path] for e in entries])
    raise RespScreenError(
        f"unknown model scheme {scheme!r}; use oracle, constant:<p>, or scores:<csv>")


def cmd_eval(args) -> int:
    entries = load_manifest(args.manifest)
    scores = _scores_for(entries, args.model)
    labels = np.array([e.label for e in entries])
    items = [(e.path, e.label, e.group) for e in entries]
    plan = kfold_plan(items, k=args.k, seed=args.seed)
    index = {e.path: i for i, e in enumerate(entries)}
    per_fold = []
    for roles in plan.roles:
        rows = [index[p] for p in roles.test]
        data = LabeledScores(scores=scores[rows], labels=labels[rows])
        per_fold.append({"auc": roc_auc(data), "mcc": mcc_at_threshold(data)})
    aucs = np.array([f["auc"] for f in per_fold])
    mccs = np.array([f["mcc"] for f in per_fold])
    print(json.dumps({
        "k": plan.k,
        "folds": per_fold,
        "mean": {"auc": float(aucs.mean()), "mcc": float(mccs.mean())},
        "std": {"auc": float(aucs.std()), "mcc": float(mccs.std())},
    }))
    return 0


def cmd_gridsearch(args) -> int:
    with open(args.scores) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise RespScreenError(f"{args.scores}: no score rows")
    labels = np.array([int(r["label"]) for r in rows])
    branch_scores = {
        name: LabeledScores(
            scores=np.array([float(r[name]) for r in rows]), labels=labels)
        for name in BRANCH_ORDER
    }
    weights, achieved = grid_search_weights(branch_scores, metric=args.metric,
                                            step=args.step)
    print(json.dumps({"weights": {"t": weights.t, "x": weights.x,
                                  "y": weights.y, "z": weights.z},
                      "metric": args.metric, "achieved": achieved}))
    return 0


def cmd_analytics(args) -> int:
    store = SubmissionStore(args.log)
    log = store.read_all()
    gated = [r for r in log if r.gate is not None]
    report = rerecording_analysis(log)
    hist = probability_histogram([r.gate.score for r in gated], bin_count=args.bins)
    print(json.dumps({
        "records": len(log),
        "gated_recordings": len(gated),
        "rejection_rate": rejection_rate(log) if gated else None,
        "rerecording": {
            "sequences": len(report.sequences),
            "rejected_count": report.rejected_count,
            "rerecorded_fraction": report.rerecorded_fraction,
            "success_fraction": report.success_fraction,
        },
        "gate_score_histogram": {"edges": list(hist.edges),
                                 "counts": [int(c) for c in hist.counts]},
    }))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = ServiceConfig.from_file(args.config)
    host, _, port = config.listen_address.rpartition(":")
    uvicorn.run(create_app(config), host=host or "127.0.0.1", port=int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="respscreen")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for any randomized step")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract the 1356-value feature vector")
    p.add_argument("clip")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("detect", help="run the cough gate on a clip")
    p.add_argument("clip")
    p.add_argument("--model", default="stub:0.5",
                   help="detector URI (stub:<p> or a model file)")
    p.add_argument("--threshold", type=float, default=0.25)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("screen", help="full screening verdict for clips")
    p.add_argument("--cough", required=True)
    p.add_argument("--breath", default=None)
    p.add_argument("--voice", default=None)
    p.add_argument("--symptoms", default=None,
                   help="comma-separated symptom names")
    p.add_argument("--weights", default="variant2",
                   help="variant1 | variant2 | t,x,y,z")
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_screen)

    p = sub.add_parser("eval", help="k-fold metric report over a manifest")
    p.add_argument("manifest")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--model", default="oracle",
                   help="oracle | constant:<p> | scores:<csv>")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gridsearch", help="search stacking weights")
    p.add_argument("scores", help="CSV with label plus one column per branch")
    p.add_argument("--metric", choices=("auc", "mcc"), default="auc")
    p.add_argument("--step", type=float, default=DEFAULT_GRID_STEP)
    p.set_defaults(fn=cmd_gridsearch)

    p = sub.add_parser("analytics", help="report over a submission log")
    p.add_argument("log")
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(fn=cmd_analytics)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except RespScreenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
