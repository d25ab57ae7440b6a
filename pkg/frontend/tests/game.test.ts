import { describe, expect, it } from "vitest";

import { GameApi } from "../src/api.js";
import { GameSession, accuracy } from "../src/game.js";
import { FakeRound, FakeServer } from "./fake_server.js";

const ROUNDS: FakeRound[] = [
  {
    labels: ["solid back", "slatted back", "holey back"],
    targetSlot: 1,
    utterance: "the slatted back",
    difficulty: "hard",
  },
  {
    labels: ["thin legs", "thick legs", "metal legs"],
    targetSlot: 0,
    utterance: "the thin legs",
    difficulty: "easy",
  },
  {
    labels: ["padded seat", "flat seat", "wide seat"],
    targetSlot: 2,
    utterance: "the wide seat",
    difficulty: "easy",
  },
];

function makeSession(now?: () => number): {
  session: GameSession;
  server: FakeServer;
} {
  const server = new FakeServer(structuredClone(ROUNDS));
  // indirection so tests can swap server.fetch mid-session
  const api = new GameApi("", (input, init) => server.fetch(input, init));
  return { session: new GameSession(api, now), server };
}

describe("GameSession state machine", () => {
  it("starts in the playing phase on round 0", async () => {
    const { session } = makeSession();
    const state = await session.start("human_listener", 3);
    expect(state.phase).toBe("playing");
    expect(state.round?.round_index).toBe(0);
    expect(state.nRounds).toBe(3);
    expect(accuracy(state)).toBeNull();
  });

  it("advances one round per acknowledged submission", async () => {
    const { session, server } = makeSession();
    await session.start("human_listener", 3);
    let state = await session.choose(1); // correct
    expect(state.round?.round_index).toBe(1);
    expect(state.completed).toBe(1);
    expect(state.correct).toBe(1);
    state = await session.choose(2); // wrong
    expect(state.round?.round_index).toBe(2);
    expect(state.correct).toBe(1);
    expect(server.results.map((r) => r.choice)).toEqual([1, 2]);
  });

  it("finishes after the last round and tallies the score", async () => {
    const { session } = makeSession();
    await session.start("human_listener", 3);
    await session.choose(1);
    await session.choose(0);
    const state = await session.choose(2);
    expect(state.phase).toBe("finished");
    expect(state.round).toBeNull();
    expect(state.completed).toBe(3);
    expect(state.correct).toBe(3);
    expect(accuracy(state)).toBe(1);
  });

  it("recovers from a conflict by converging on the server round", async () => {
    const { session, server } = makeSession();
    await session.start("human_listener", 3);
    // another client submits round 0 behind this session's back
    await server.fetch(`/sessions/${server.sessionId}/rounds/0`, {
      method: "POST",
      body: JSON.stringify({ choice: 0, latency_ms: 0 }),
    });
    const state = await session.choose(1); // 409 -> refetch
    expect(state.phase).toBe("playing");
    expect(state.round?.round_index).toBe(1);
    expect(server.results).toHaveLength(1); // no double submission
  });

  it("measures latency from round display to submission", async () => {
    let clock = 1000;
    const { session, server } = makeSession(() => clock);
    await session.start("human_listener", 3);
    clock += 450;
    await session.choose(1);
    const submit = server.requests.find((r) =>
      r.path.endsWith("/rounds/0"),
    ) as { body: { latency_ms: number } };
    expect(submit.body.latency_ms).toBe(450);
  });

  it("rejects a move when no round is awaiting one", async () => {
    const { session } = makeSession();
    await expect(session.choose(0)).rejects.toThrow(/no round/);
  });

  it("keeps playing and records the error on non-conflict failures", async () => {
    const { session, server } = makeSession();
    await session.start("human_listener", 3);
    const failingFetch = server.fetch;
    server.fetch = async () =>
      new Response(JSON.stringify({ detail: "boom" }), { status: 500 });
    await expect(session.choose(1)).rejects.toThrow(/boom/);
    expect(session.state.phase).toBe("playing");
    expect(session.state.error).toContain("boom");
    server.fetch = failingFetch;
  });
});
