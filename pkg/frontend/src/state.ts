// Client-side session state machine. The UI is a thin renderer over this
// reducer; all inference stays on the server.

import type { RecordingKind, SymptomName, Verdict } from "./api.js";

export type RecordingStatus =
  | "none"
  | "recording"
  | "uploading"
  | "accepted"
  | "rejected"
  | "skipped";

export interface ClientSessionState {
  sessionId: string | null;
  symptoms: SymptomName[];
  symptomsSubmitted: boolean;
  recordings: Record<RecordingKind, RecordingStatus>;
  attempts: Record<RecordingKind, number>;
  instructions: string | null;
  verdict: Verdict | null;
  error: string | null;
}

export type SessionEvent =
  | { type: "symptom_toggled"; symptom: SymptomName }
  | { type: "session_created"; sessionId: string }
  | { type: "session_failed"; message: string }
  | { type: "record_started"; kind: RecordingKind }
  | { type: "upload_started"; kind: RecordingKind }
  | { type: "upload_accepted"; kind: RecordingKind }
  | { type: "upload_rejected"; kind: RecordingKind; instructions: string }
  | { type: "upload_failed"; kind: RecordingKind; message: string }
  | { type: "step_skipped"; kind: RecordingKind }
  | { type: "verdict_received"; verdict: Verdict }
  | { type: "restarted" };

export const KIND_ORDER: RecordingKind[] = ["cough", "breath", "voice"];

export function initialState(): ClientSessionState {
  return {
    sessionId: null,
    symptoms: [],
    symptomsSubmitted: false,
    recordings: { cough: "none", breath: "none", voice: "none" },
    attempts: { cough: 0, breath: 0, voice: 0 },
    instructions: null,
    verdict: null,
    error: null,
  };
}

// Only the voice step may be skipped: the flow requires cough and breath.
export function isSkippable(kind: RecordingKind): boolean {
  return kind === "voice";
}

// Predict requires an accepted cough, a recorded breath, and the voice
// step resolved (recorded or explicitly skipped).
export function canPredict(state: ClientSessionState): boolean {
  return (
    state.recordings.cough === "accepted" &&
    state.recordings.breath === "accepted" &&
    (state.recordings.voice === "accepted" ||
      state.recordings.voice === "skipped") &&
    state.verdict === null
  );
}

export function reduce(
  state: ClientSessionState,
  event: SessionEvent,
): ClientSessionState {
  switch (event.type) {
    case "symptom_toggled": {
      const symptoms = state.symptoms.includes(event.symptom)
        ? state.symptoms.filter((s) => s !== event.symptom)
        : [...state.symptoms, event.symptom];
      return { ...state, symptoms };
    }
    case "session_created":
      return {
        ...state,
        sessionId: event.sessionId,
        symptomsSubmitted: true,
        error: null,
      };
    case "session_failed":
      return { ...state, error: event.message };
    case "record_started":
      return {
        ...state,
        recordings: { ...state.recordings, [event.kind]: "recording" },
        error: null,
      };
    case "upload_started":
      return {
        ...state,
        recordings: { ...state.recordings, [event.kind]: "uploading" },
        attempts: {
          ...state.attempts,
          [event.kind]: state.attempts[event.kind] + 1,
        },
      };
    case "upload_accepted":
      return {
        ...state,
        recordings: { ...state.recordings, [event.kind]: "accepted" },
        instructions: event.kind === "cough" ? null : state.instructions,
      };
    case "upload_rejected":
      return {
        ...state,
        recordings: { ...state.recordings, [event.kind]: "rejected" },
        instructions: event.instructions,
      };
    case "upload_failed":
      // network failure: the attempt is lost but the session survives
      return {
        ...state,
        recordings: { ...state.recordings, [event.kind]: "none" },
        error: event.message,
      };
    case "step_skipped":
      if (!isSkippable(event.kind)) {
        return state;
      }
      return {
        ...state,
        recordings: { ...state.recordings, [event.kind]: "skipped" },
      };
    case "verdict_received":
      return { ...state, verdict: event.verdict };
    case "restarted":
      // the uncertain-verdict restart: recordings begin again, the session
      // and symptom answers survive
      return {
        ...state,
        recordings: { cough: "none", breath: "none", voice: "none" },
        attempts: { cough: 0, breath: 0, voice: 0 },
        instructions: null,
        verdict: null,
        error: null,
      };
    default:
      return state;
  }
}
