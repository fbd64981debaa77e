import { describe, expect, it } from "vitest";

import { ApiClient, RankResponse } from "../src/api.js";
import { RankingController } from "../src/controller.js";
import type { SessionState } from "../src/state.js";

function fakeResponse(status: number, payload: unknown): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => payload,
  } as unknown as Response;
}

function ranking(genes: Array<[string, number]>, excluded = false): RankResponse {
  return {
    ranking: genes.map(([gene, score]) => ({ gene, score })),
    subgraph: { nodes: 5, edges: 4 },
    excluded,
  };
}

interface PendingCall {
  body: { phenotypes: string[] };
  resolve: (payload: unknown) => void;
  reject: (err: Error) => void;
}

/** Mock server whose /rank responses resolve only when the test says so. */
function mockServer() {
  const calls: PendingCall[] = [];
  const fetchFn = (url: string, init?: RequestInit): Promise<Response> => {
    if (!url.endsWith("/rank")) throw new Error(`unexpected url ${url}`);
    return new Promise<Response>((resolveOuter, rejectOuter) => {
      calls.push({
        body: JSON.parse(String(init?.body)),
        resolve: (payload) => resolveOuter(fakeResponse(200, payload)),
        reject: rejectOuter,
      });
    });
  };
  return { calls, fetchFn };
}

function record(): { states: SessionState[]; listener: (s: SessionState) => void } {
  const states: SessionState[] = [];
  return { states, listener: (s) => states.push({ ...s }) };
}

const flush = () => new Promise<void>((resolve) => setTimeout(resolve, 0));

describe("latest-wins request handling", () => {
  it("renders exactly the final request's response under rapid input", async () => {
    const server = mockServer();
    const { states, listener } = record();
    const controller = new RankingController(new ApiClient("http://x", server.fetchFn), listener);

    void controller.togglePhenotype("HP:1");
    void controller.togglePhenotype("HP:2");
    void controller.togglePhenotype("HP:3");
    expect(server.calls.length).toBe(3);
    expect(server.calls[2].body.phenotypes).toEqual(["HP:1", "HP:2", "HP:3"]);

    // resolve out of order: middle, first, then the latest
    server.calls[1].resolve(ranking([["STALE-B", 1]]));
    server.calls[0].resolve(ranking([["STALE-A", 1]]));
    server.calls[2].resolve(ranking([["FINAL", 0.9], ["OTHER", 0.1]]));
    await flush();

    expect(controller.state.lastResponse?.ranking[0].gene).toBe("FINAL");
    const applied = states.filter((s) => s.lastResponse !== null);
    expect(applied.length).toBe(1); // stale responses were discarded
    expect(applied[0].lastResponse?.ranking[0].gene).toBe("FINAL");
  });

  it("a stale response arriving after the latest is still discarded", async () => {
    const server = mockServer();
    const controller = new RankingController(new ApiClient("http://x", server.fetchFn));

    void controller.togglePhenotype("HP:1");
    void controller.togglePhenotype("HP:2");
    server.calls[1].resolve(ranking([["KEEP", 1]]));
    await flush();
    expect(controller.state.lastResponse?.ranking[0].gene).toBe("KEEP");

    server.calls[0].resolve(ranking([["LATE", 1]]));
    await flush();
    expect(controller.state.lastResponse?.ranking[0].gene).toBe("KEEP");
  });

  it("removing the only phenotype clears the panel without a request", async () => {
    const server = mockServer();
    const controller = new RankingController(new ApiClient("http://x", server.fetchFn));

    void controller.togglePhenotype("HP:1");
    server.calls[0].resolve(ranking([["G1", 1]]));
    await flush();
    expect(controller.state.lastResponse).not.toBeNull();

    await controller.togglePhenotype("HP:1");
    expect(controller.state.phenotypes).toEqual([]);
    expect(controller.state.lastResponse).toBeNull();
    expect(server.calls.length).toBe(1); // no second request went out
  });

  it("toggle adds then removes while keeping order of the rest", async () => {
    const server = mockServer();
    const controller = new RankingController(new ApiClient("http://x", server.fetchFn));
    void controller.togglePhenotype("HP:1");
    void controller.togglePhenotype("HP:2");
    void controller.togglePhenotype("HP:3");
    void controller.togglePhenotype("HP:2");
    expect(server.calls[3].body.phenotypes).toEqual(["HP:1", "HP:3"]);
  });
});

describe("failure handling", () => {
  it("network failure surfaces a retry banner and keeps the last ranking", async () => {
    const server = mockServer();
    const controller = new RankingController(new ApiClient("http://x", server.fetchFn));

    void controller.togglePhenotype("HP:1");
    server.calls[0].resolve(ranking([["G1", 1]]));
    await flush();

    void controller.togglePhenotype("HP:2");
    server.calls[1].reject(new Error("network down"));
    await flush();

    expect(controller.state.error).toContain("network down");
    expect(controller.state.lastResponse?.ranking[0].gene).toBe("G1"); // unchanged
    expect(controller.state.inFlight).toBe(false);

    void controller.retry();
    expect(server.calls.length).toBe(3);
    server.calls[2].resolve(ranking([["G2", 1]]));
    await flush();
    expect(controller.state.error).toBeNull();
    expect(controller.state.lastResponse?.ranking[0].gene).toBe("G2");
  });

  it("schema violations are reported as errors, not rendered", async () => {
    const server = mockServer();
    const controller = new RankingController(new ApiClient("http://x", server.fetchFn));
    void controller.togglePhenotype("HP:1");
    server.calls[0].resolve({ totally: "wrong" });
    await flush();
    expect(controller.state.error).toContain("schema violation");
    expect(controller.state.lastResponse).toBeNull();
  });

  it("a stale failure does not clobber the newer response", async () => {
    const server = mockServer();
    const controller = new RankingController(new ApiClient("http://x", server.fetchFn));
    void controller.togglePhenotype("HP:1");
    void controller.togglePhenotype("HP:2");
    server.calls[1].resolve(ranking([["WINNER", 1]]));
    await flush();
    server.calls[0].reject(new Error("slow request died"));
    await flush();
    expect(controller.state.error).toBeNull();
    expect(controller.state.lastResponse?.ranking[0].gene).toBe("WINNER");
  });
});

describe("delta bookkeeping across responses", () => {
  it("remembers the previous ranking for delta display", async () => {
    const server = mockServer();
    const controller = new RankingController(new ApiClient("http://x", server.fetchFn));
    void controller.togglePhenotype("HP:1");
    server.calls[0].resolve(ranking([["A", 0.9], ["B", 0.5], ["C", 0.1]]));
    await flush();
    void controller.togglePhenotype("HP:2");
    server.calls[1].resolve(ranking([["C", 0.8], ["A", 0.6], ["B", 0.2]]));
    await flush();
    expect(controller.state.previousRanks?.get("C")).toBe(3);
    expect(controller.state.lastResponse?.ranking[0].gene).toBe("C");
  });
});
