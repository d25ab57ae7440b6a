/** Round state machine for one game session.
 *
 * The server is the source of truth: every transition is driven by a server
 * acknowledgment, and a conflict (another tab already submitted this round)
 * resolves by re-fetching the current round instead of failing the session.
 */

import {
  ApiError,
  GameApi,
  Role,
  RoundView,
  SessionDoneView,
  SubmitPayload,
  SubmitRoundResponse,
} from "./api.js";

export type Phase = "idle" | "playing" | "submitting" | "finished";

export interface GameState {
  phase: Phase;
  sessionId: string | null;
  role: Role | null;
  round: RoundView | null;
  lastOutcome: SubmitRoundResponse | null;
  completed: number;
  correct: number;
  nRounds: number;
  error: string | null;
}

export function initialState(): GameState {
  return {
    phase: "idle",
    sessionId: null,
    role: null,
    round: null,
    lastOutcome: null,
    completed: 0,
    correct: 0,
    nRounds: 0,
    error: null,
  };
}

export class GameSession {
  state: GameState = initialState();
  private roundShownAt = 0;

  constructor(
    private readonly api: GameApi,
    private readonly now: () => number = () => Date.now(),
  ) {}

  async start(role: Role, nRounds?: number, seed = 0): Promise<GameState> {
    const created = await this.api.createSession(role, nRounds, seed);
    this.state = {
      ...initialState(),
      sessionId: created.session_id,
      role: created.role,
      nRounds: created.n_rounds,
    };
    return this.refreshRound();
  }

  /** Pull the authoritative current round (also used for 409 recovery). */
  async refreshRound(): Promise<GameState> {
    if (!this.state.sessionId) throw new Error("session not started");
    const view = await this.api.currentRound(this.state.sessionId);
    if (view.done) {
      this.applyDone(view);
    } else {
      this.state = {
        ...this.state,
        phase: "playing",
        round: view,
        completed: view.completed,
        correct: view.correct_so_far,
        error: null,
      };
      this.roundShownAt = this.now();
    }
    return this.state;
  }

  /** Listener move: pick the object shown in a slot. */
  choose(slot: number): Promise<GameState> {
    return this.submit({ choice: slot, latency_ms: this.latency() });
  }

  /** Speaker move: describe the highlighted target. */
  describe(utterance: string): Promise<GameState> {
    return this.submit({ utterance, latency_ms: this.latency() });
  }

  private latency(): number {
    return Math.max(0, this.now() - this.roundShownAt);
  }

  private async submit(payload: SubmitPayload): Promise<GameState> {
    const { sessionId, round, phase } = this.state;
    if (!sessionId || !round || phase !== "playing") {
      throw new Error("no round is awaiting a submission");
    }
    this.state = { ...this.state, phase: "submitting" };
    try {
      const outcome = await this.api.submitRound(
        sessionId,
        round.round_index,
        payload,
      );
      this.state = {
        ...this.state,
        lastOutcome: outcome,
        completed: this.state.completed + 1,
        correct: this.state.correct + (outcome.correct ? 1 : 0),
      };
      if (outcome.done) {
        this.state = { ...this.state, phase: "finished", round: null };
        return this.state;
      }
      return this.refreshRound();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // round already recorded elsewhere: converge on the server's state
        return this.refreshRound();
      }
      this.state = {
        ...this.state,
        phase: "playing",
        error: error instanceof Error ? error.message : String(error),
      };
      throw error;
    }
  }

  private applyDone(view: SessionDoneView): void {
    this.state = {
      ...this.state,
      phase: "finished",
      round: null,
      completed: view.completed,
      correct: view.correct_so_far,
      nRounds: view.n_rounds,
    };
  }
}

/** Accuracy as the dashboard shows it; null until something completed. */
export function accuracy(state: GameState): number | null {
  return state.completed === 0 ? null : state.correct / state.completed;
}
