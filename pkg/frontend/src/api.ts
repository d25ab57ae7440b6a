/** Typed client for the reference-game HTTP API. */

export type Role = "human_listener" | "human_speaker";

export interface ObjectView {
  slot: number;
  object_id: string;
  label: string;
  image_url: string;
}

export interface RoundView {
  done: false;
  round_index: number;
  n_rounds: number;
  role: Role;
  objects: ObjectView[];
  utterance: string | null;
  difficulty: string;
  completed: number;
  correct_so_far: number;
}

export interface SessionDoneView {
  done: true;
  completed: number;
  correct_so_far: number;
  n_rounds: number;
}

export interface CreateSessionResponse {
  session_id: string;
  role: Role;
  n_rounds: number;
}

export interface SubmitRoundResponse {
  round_index: number;
  correct: boolean;
  target_slot: number;
  model_choice_slot: number | null;
  done: boolean;
}

export interface SessionReport {
  session_id: string;
  role: Role;
  n_rounds: number;
  completed: number;
  overall_accuracy: number | null;
  hard_accuracy: number | null;
  hard_count: number;
  easy_accuracy: number | null;
  easy_count: number;
  done: boolean;
}

export interface AggregateBucket {
  accuracy: number | null;
  count: number;
}

export interface AggregateReport {
  n_sessions: number;
  overall: AggregateBucket;
  hard: AggregateBucket;
  easy: AggregateBucket;
}

export type SubmitPayload =
  | { choice: number; latency_ms: number }
  | { utterance: string; latency_ms: number };

/** Error carrying the HTTP status so callers can react to 409/404/400. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class GameApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) =>
      fetch(input, init),
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const parsed = (await response.json()) as { detail?: string };
        if (parsed.detail) detail = parsed.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  createSession(
    role: Role,
    nRounds?: number,
    seed = 0,
  ): Promise<CreateSessionResponse> {
    const body: Record<string, unknown> = { role, seed };
    if (nRounds !== undefined) body.n_rounds = nRounds;
    return this.request("POST", "/sessions", body);
  }

  currentRound(sessionId: string): Promise<RoundView | SessionDoneView> {
    return this.request("GET", `/sessions/${sessionId}/round`);
  }

  submitRound(
    sessionId: string,
    roundIndex: number,
    payload: SubmitPayload,
  ): Promise<SubmitRoundResponse> {
    return this.request(
      "POST",
      `/sessions/${sessionId}/rounds/${roundIndex}`,
      payload,
    );
  }

  sessionReport(sessionId: string): Promise<SessionReport> {
    return this.request("GET", `/sessions/${sessionId}/report`);
  }

  aggregateReport(): Promise<AggregateReport> {
    return this.request("GET", "/report");
  }
}
