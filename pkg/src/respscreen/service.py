"""HTTP service exposing the screening flow.

Handlers are stateless over a shared immutable model registry and the
append-only submission store, so instances can be replicated behind a
load balancer without server affinity. Per-session audio lives in memory
keyed by session id; everything analytics needs is in the store.

API (JSON bodies unless noted):
  POST /v1/sessions                           {symptoms?, device_model?, device_id?, self_reported_status?}
  POST /v1/sessions/{id}/recordings?kind=...  raw WAV body -> gate decision (cough) | receipt
  POST /v1/sessions/{id}/predict              -> verdict + per-branch probabilities + disclaimer
  GET  /v1/analytics                          admin token -> rejection/re-recording/histogram report
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field as dc_field
from datetime import datetime, timezone
from typing import Optional

import numpy as np
from fastapi import FastAPI, Header, Query, Request
from fastapi.responses import JSONResponse

from .audio import load_clip
from .config import ModelRegistry, ServiceConfig
from .errors import DecodeError, EmptyInputError, RespScreenError
from .evaluation import probability_histogram
from .models import SYMPTOM_ORDER
from .screening import SessionInputs, gate_recording, run_full_pipeline
from .sessions import (
    RECORDING_KINDS,
    SubmissionRecord,
    SubmissionStore,
    rejection_rate,
    rerecording_analysis,
)

RETRY_INSTRUCTIONS = (
    "We could not detect a cough in this recording. Hold the device about "
    "30 cm from your mouth, reduce background noise, and cough naturally "
    "two or three times, then record again."
)


@dataclass
class SessionState:
    session_id: str
    device_id: str
    device_model: Optional[str]
    self_reported_status: str
    symptoms: Optional[np.ndarray]
    clips: dict = dc_field(default_factory=dict)
    gates: dict = dc_field(default_factory=dict)
    lock: threading.Lock = dc_field(default_factory=threading.Lock)


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _symptom_bitmap(names) -> np.ndarray:
    unknown = [n for n in names if n not in SYMPTOM_ORDER]
    if unknown:
        raise ValueError(
            f"unknown symptoms {unknown}; allowed: {list(SYMPTOM_ORDER)}")
    return np.array([1.0 if name in set(names) else 0.0
                     for name in SYMPTOM_ORDER])


def create_app(config: ServiceConfig,
               registry: Optional[ModelRegistry] = None,
               store: Optional[SubmissionStore] = None) -> FastAPI:
    registry = registry if registry is not None else config.build_registry()
    store = store if store is not None else SubmissionStore(config.storage_path)
    sessions: dict = {}
    sessions_lock = threading.Lock()
    app = FastAPI(title="respscreen")

    def _session(session_id: str) -> Optional[SessionState]:
        with sessions_lock:
            return sessions.get(session_id)

    @app.post("/v1/sessions")
    async def create_session(request: Request):
        try:
            body = await request.json() if await request.body() else {}
        except Exception:
            return _error(400, "request body must be JSON")
        if not isinstance(body, dict):
            return _error(400, "request body must be a JSON object")
        unknown = set(body) - {"symptoms", "device_model", "device_id",
                               "self_reported_status"}
        if unknown:
            return _error(400, f"unknown fields {sorted(unknown)}")
        symptoms = None
        if body.get("symptoms"):
            try:
                symptoms = _symptom_bitmap(body["symptoms"])
            except ValueError as exc:
                return _error(400, str(exc))
        status = body.get("self_reported_status", "unanswered")
        if status not in ("yes", "no", "unanswered"):
            return _error(400, f"invalid self_reported_status {status!r}")
        session_id = uuid.uuid4().hex
        state = SessionState(
            session_id=session_id,
            device_id=str(body.get("device_id") or session_id),
            device_model=body.get("device_model"),
            self_reported_status=status,
            symptoms=symptoms,
        )
        with sessions_lock:
            sessions[session_id] = state
        return {"session_id": session_id,
                "symptoms_recorded": symptoms is not None}

    @app.post("/v1/sessions/{session_id}/recordings")
    async def upload_recording(session_id: str, request: Request,
                               kind: str = Query(...)):
        state = _session(session_id)
        if state is None:
            return _error(404, f"unknown session {session_id!r}")
        if kind not in RECORDING_KINDS:
            return _error(400, f"kind must be one of {list(RECORDING_KINDS)}")
        body = await request.body()
        if len(body) > config.max_upload_bytes:
            return _error(413, "audio upload exceeds the size cap")
        try:
            clip = load_clip(body)
        except (DecodeError, EmptyInputError) as exc:
            return _error(422, f"undecodable audio: {exc}")
        if clip.duration > config.max_upload_seconds:
            return _error(422, "recording exceeds the duration cap")

        with state.lock:
            state.clips[kind] = clip
            if kind != "cough":
                # breath/voice are stored without gating (the gate is cough-specific)
                store.append(SubmissionRecord(
                    device_id=state.device_id,
                    timestamp=datetime.now(timezone.utc),
                    recording_kind=kind,
                    self_reported_status=state.self_reported_status,
                    device_model=state.device_model,
                ))
                return {"kind": kind, "received": True}
            gate = gate_recording(clip, registry.detector, config.gate_threshold)
            state.gates["cough"] = gate
            store.append(SubmissionRecord(
                device_id=state.device_id,
                timestamp=datetime.now(timezone.utc),
                recording_kind="cough",
                gate=gate,
                self_reported_status=state.self_reported_status,
                device_model=state.device_model,
            ))
        payload = {"kind": "cough",
                   "gate": {"score": gate.score, "accepted": gate.accepted,
                            "threshold": gate.threshold, "reason": gate.reason}}
        if not gate.accepted:
            payload["retry_prompt"] = True
            payload["instructions"] = RETRY_INSTRUCTIONS
        return payload

    @app.post("/v1/sessions/{session_id}/predict")
    async def predict(session_id: str):
        state = _session(session_id)
        if state is None:
            return _error(404, f"unknown session {session_id!r}")
        with state.lock:
            gate = state.gates.get("cough")
            if gate is None or not gate.accepted:
                return _error(409, "gate not passed: no accepted cough recording")
            inputs = SessionInputs(
                cough=state.clips["cough"],
                breath=state.clips.get("breath"),
                voice=state.clips.get("voice"),
                symptoms=state.symptoms,
            )
            try:
                result = run_full_pipeline(
                    inputs, registry, config.stacking_weights(),
                    symptom_weight=config.symptom_weight,
                    gate_threshold=config.gate_threshold)
            except RespScreenError as exc:
                return _error(500, f"pipeline failure: {exc}")
            if result.verdict is None:
                return _error(409, "gate not passed: recording rejected")
            store.append(SubmissionRecord(
                device_id=state.device_id,
                timestamp=datetime.now(timezone.utc),
                recording_kind="cough",
                verdict=result.verdict,
                self_reported_status=state.self_reported_status,
                device_model=state.device_model,
            ))
        branches = result.branch_probabilities
        return {
            "verdict": {
                "probability": result.verdict.probability,
                "band": result.verdict.band,
                "disclaimer": result.verdict.disclaimer,
            },
            "branches": {
                "dcnn": branches.p_dcnn,
                "gb": branches.p_gb,
                "gb_breath": branches.p_gb_breath,
                "gb_voice": branches.p_gb_voice,
                "symptoms": result.symptom_probability,
            },
            "audio_probability": result.audio_probability,
            "disclaimer": result.verdict.disclaimer,
        }

    @app.get("/v1/analytics")
    def analytics(x_admin_token: Optional[str] = Header(default=None),
                  bins: int = Query(default=10, gt=0, le=1000)):
        if config.admin_token is not None and x_admin_token != config.admin_token:
            return _error(403, "admin token required")
        log = store.read_all()
        gated = [r for r in log if r.gate is not None]
        report = rerecording_analysis(log)
        gate_hist = probability_histogram(
            [r.gate.score for r in gated], bin_count=bins)
        verdict_hist = probability_histogram(
            [r.verdict.probability for r in log if r.verdict is not None],
            bin_count=bins)
        return {
            "gated_recordings": len(gated),
            "rejection_rate": (rejection_rate(log) if gated else None),
            "rerecording": {
                "sequences": len(report.sequences),
                "rejected_count": report.rejected_count,
                "rerecorded_fraction": report.rerecorded_fraction,
                "success_fraction": report.success_fraction,
            },
            "gate_score_histogram": {
                "edges": list(gate_hist.edges),
                "counts": [int(c) for c in gate_hist.counts],
            },
            "verdict_histogram": {
                "edges": list(verdict_hist.edges),
                "counts": [int(c) for c in verdict_hist.counts],
                "band_markers": list(verdict_hist.band_markers),
            },
        }

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    return app
