// DOM render functions. Pure element builders over the state; every
// verdict view carries the disclaimer node, and the recording steps
// expose a skip control only where the flow allows one.

import { SYMPTOMS, type SymptomName, type Verdict } from "./api.js";
import {
  canPredict,
  isSkippable,
  KIND_ORDER,
  type ClientSessionState,
  type RecordingStatus,
} from "./state.js";
import type { RecordingKind } from "./api.js";

export interface ViewHandlers {
  onSymptomToggle: (symptom: SymptomName) => void;
  onStartSession: () => void;
  onRecord: (kind: RecordingKind) => void;
  onSkip: (kind: RecordingKind) => void;
  onPredict: () => void;
  onRestart: () => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderSymptomChecklist(
  selected: SymptomName[],
  handlers: ViewHandlers,
): HTMLElement {
  const root = el("section", "symptoms");
  root.appendChild(el("h2", undefined, "Your symptoms"));
  root.appendChild(
    el("p", "hint", "Tick anything that applies. You can leave all boxes empty."),
  );
  const list = el("ul", "symptom-list");
  for (const symptom of SYMPTOMS) {
    const item = el("li");
    const label = el("label");
    const box = el("input") as HTMLInputElement;
    box.type = "checkbox";
    box.value = symptom;
    box.checked = selected.includes(symptom);
    box.addEventListener("change", () => handlers.onSymptomToggle(symptom));
    label.appendChild(box);
    label.appendChild(
      el("span", undefined, symptom.replace("_", " ")),
    );
    item.appendChild(label);
    list.appendChild(item);
  }
  root.appendChild(list);
  const start = el("button", "start-session", "Start screening");
  start.addEventListener("click", handlers.onStartSession);
  root.appendChild(start);
  return root;
}

const STATUS_LABEL: Record<RecordingStatus, string> = {
  none: "not recorded yet",
  recording: "recording…",
  uploading: "uploading…",
  accepted: "accepted",
  rejected: "rejected",
  skipped: "skipped",
};

export function renderRecordingStep(
  kind: RecordingKind,
  status: RecordingStatus,
  attempts: number,
  handlers: ViewHandlers,
): HTMLElement {
  const root = el("section", `step step-${kind}`);
  root.appendChild(el("h3", undefined, `${kind} recording`));
  root.appendChild(el("p", "status", STATUS_LABEL[status]));
  if (attempts > 0) {
    root.appendChild(el("p", "attempts", `attempts: ${attempts}`));
  }
  const record = el(
    "button",
    "record",
    status === "none" || status === "rejected" ? "Record" : "Record again",
  );
  record.addEventListener("click", () => handlers.onRecord(kind));
  root.appendChild(record);
  if (isSkippable(kind) && status !== "accepted") {
    const skip = el("button", "skip", "Skip this step");
    skip.addEventListener("click", () => handlers.onSkip(kind));
    root.appendChild(skip);
  }
  return root;
}

export function renderRejectionBanner(
  instructions: string,
  handlers: ViewHandlers,
): HTMLElement {
  const root = el("section", "rejection");
  root.appendChild(
    el("p", "rejection-message", "We could not use that cough recording."),
  );
  root.appendChild(el("p", "instructions", instructions));
  const retry = el("button", "rerecord", "Re-record cough");
  retry.addEventListener("click", () => handlers.onRecord("cough"));
  root.appendChild(retry);
  return root;
}

export function renderVerdict(
  verdict: Verdict,
  handlers: ViewHandlers,
): HTMLElement {
  const root = el("section", `verdict verdict-${verdict.band}`);
  if (verdict.band === "uncertain") {
    root.appendChild(el("h2", undefined, "Result uncertain"));
    root.appendChild(
      el(
        "p",
        "message",
        "The screening could not lean either way. You may repeat the " +
          "recording process from the beginning.",
      ),
    );
    const restart = el("button", "restart", "Repeat the screening");
    restart.addEventListener("click", handlers.onRestart);
    root.appendChild(restart);
  } else if (verdict.band === "negative-screen") {
    root.appendChild(el("h2", undefined, "Negative screen"));
    root.appendChild(
      el(
        "p",
        "message",
        "The screening did not pick up patterns it associates with infection.",
      ),
    );
  } else {
    root.appendChild(el("h2", undefined, "Positive screen"));
    root.appendChild(
      el(
        "p",
        "message",
        "The screening picked up patterns it associates with infection. " +
          "Please seek clinical testing, such as a PCR test.",
      ),
    );
  }
  root.appendChild(
    el("p", "probability", `score: ${verdict.probability.toFixed(3)}`),
  );
  root.appendChild(el("p", "disclaimer", verdict.disclaimer));
  return root;
}

export function renderApp(
  state: ClientSessionState,
  handlers: ViewHandlers,
): HTMLElement {
  const root = el("main", "screening-app");
  root.appendChild(el("h1", undefined, "Respiratory screening"));

  if (state.error) {
    root.appendChild(el("p", "error", state.error));
  }

  if (state.verdict) {
    root.appendChild(renderVerdict(state.verdict, handlers));
    return root;
  }

  if (!state.sessionId) {
    root.appendChild(renderSymptomChecklist(state.symptoms, handlers));
    return root;
  }

  for (const kind of KIND_ORDER) {
    root.appendChild(
      renderRecordingStep(kind, state.recordings[kind], state.attempts[kind],
        handlers),
    );
  }
  if (state.recordings.cough === "rejected" && state.instructions) {
    root.appendChild(renderRejectionBanner(state.instructions, handlers));
  }
  const predict = el("button", "predict", "Get my result") as HTMLButtonElement;
  predict.disabled = !canPredict(state);
  predict.addEventListener("click", handlers.onPredict);
  root.appendChild(predict);
  return root;
}
