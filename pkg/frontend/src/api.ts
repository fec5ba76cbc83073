// Typed client for the screening HTTP API. `fetch` is injectable so tests
// run against a stub transport.

export const SYMPTOMS = [
  "diarrhoea",
  "dyspnoea",
  "sore_throat",
  "cough",
  "rash",
  "fatigue",
  "fever",
  "anosmia",
  "dry_tongue",
] as const;

export type SymptomName = (typeof SYMPTOMS)[number];
export type RecordingKind = "cough" | "breath" | "voice";
export type VerdictBand = "negative-screen" | "uncertain" | "positive-screen";

export interface GateDecision {
  score: number;
  accepted: boolean;
  threshold: number;
  reason: string | null;
}

export interface UploadResult {
  kind: RecordingKind;
  gate?: GateDecision;
  retryPrompt: boolean;
  instructions?: string;
}

export interface Verdict {
  probability: number;
  band: VerdictBand;
  disclaimer: string;
}

export interface PredictResult {
  verdict: Verdict;
  branches: Record<string, number | null>;
  disclaimer: string;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorMessage(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { error?: string };
    if (body.error) return body.error;
  } catch {
    // fall through to the generic message
  }
  return `request failed with status ${response.status}`;
}

export class ScreeningApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async json<T>(response: Response): Promise<T> {
    if (!response.ok) {
      throw new ApiError(response.status, await errorMessage(response));
    }
    return (await response.json()) as T;
  }

  async createSession(
    symptoms: SymptomName[],
    deviceModel?: string,
  ): Promise<string> {
    const response = await this.fetchFn(`${this.baseUrl}/v1/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        symptoms,
        ...(deviceModel ? { device_model: deviceModel } : {}),
      }),
    });
    const body = await this.json<{ session_id: string }>(response);
    return body.session_id;
  }

  async uploadRecording(
    sessionId: string,
    kind: RecordingKind,
    wav: ArrayBuffer,
  ): Promise<UploadResult> {
    const response = await this.fetchFn(
      `${this.baseUrl}/v1/sessions/${sessionId}/recordings?kind=${kind}`,
      { method: "POST", headers: { "content-type": "audio/wav" }, body: wav },
    );
    const body = await this.json<{
      kind: RecordingKind;
      gate?: GateDecision;
      retry_prompt?: boolean;
      instructions?: string;
    }>(response);
    return {
      kind: body.kind,
      gate: body.gate,
      retryPrompt: body.retry_prompt ?? false,
      instructions: body.instructions,
    };
  }

  async predict(sessionId: string): Promise<PredictResult> {
    const response = await this.fetchFn(
      `${this.baseUrl}/v1/sessions/${sessionId}/predict`,
      { method: "POST" },
    );
    return this.json<PredictResult>(response);
  }
}
