import { describe, expect, it } from "vitest";

import type { RankResponse } from "../src/api.js";
import { buildRows, deltaLabel, renderError, renderRanking } from "../src/view.js";

function response(genes: Array<[string, number]>, excluded = false): RankResponse {
  return {
    ranking: genes.map(([gene, score]) => ({ gene, score })),
    subgraph: { nodes: 7, edges: 9 },
    excluded,
  };
}

describe("buildRows", () => {
  it("preserves server order even when scores look unsorted", () => {
    const rows = buildRows(response([["B", 0.1], ["A", 0.9], ["C", 0.5]]), null);
    expect(rows.map((r) => r.gene)).toEqual(["B", "A", "C"]);
    expect(rows.map((r) => r.position)).toEqual([1, 2, 3]);
    expect(rows.map((r) => r.score)).toEqual([0.1, 0.9, 0.5]);
  });

  it("maps every payload entry to exactly one row", () => {
    const resp = response([["A", 0.9], ["B", 0.5], ["C", 0.1]]);
    const rows = buildRows(resp, null);
    expect(rows.length).toBe(resp.ranking.length);
    expect(new Set(rows.map((r) => r.gene)).size).toBe(3);
  });

  it("computes upward and downward deltas against the previous ranking", () => {
    const previous = new Map([
      ["A", 5],
      ["B", 1],
    ]);
    const rows = buildRows(response([["A", 0.9], ["B", 0.5], ["C", 0.1]]), previous);
    expect(rows[0].delta).toBe(4); // rank 5 -> 1
    expect(rows[1].delta).toBe(-1); // rank 1 -> 2
    expect(rows[2].delta).toBeNull(); // newly appeared
  });

  it("previous rank 5 to new rank 2 shows +3", () => {
    const previous = new Map([["X", 5]]);
    const rows = buildRows(response([["TOP", 1.0], ["X", 0.9]]), previous);
    expect(rows[1].delta).toBe(3);
    expect(deltaLabel(rows[1].delta)).toBe("+3");
  });
});

describe("deltaLabel", () => {
  it("formats new, equal, up, and down", () => {
    expect(deltaLabel(null)).toBe("new");
    expect(deltaLabel(0)).toBe("=");
    expect(deltaLabel(2)).toBe("+2");
    expect(deltaLabel(-4)).toBe("-4");
  });
});

describe("renderRanking", () => {
  it("renders one table row per gene in payload order", () => {
    const html = renderRanking(response([["B", 0.1], ["A", 0.9], ["C", 0.5]]), null);
    const cells = [...html.matchAll(/<td>([A-Z])<\/td>/g)].map((m) => m[1]);
    expect(cells).toEqual(["B", "A", "C"]);
    expect(html).toContain("7 nodes, 9 edges");
  });

  it("shows the excluded notice instead of a table", () => {
    const html = renderRanking(response([], true), null);
    expect(html).toContain("no reachable candidate genes");
    expect(html).not.toContain("<table>");
  });

  it("escapes gene ids", () => {
    const html = renderRanking(response([["<script>", 1.0]]), null);
    expect(html).toContain("&lt;script&gt;");
  });
});

describe("renderError", () => {
  it("offers a retry action and the raw payload", () => {
    const html = renderError("boom", { raw: true });
    expect(html).toContain('data-action="retry"');
    expect(html).toContain("boom");
    expect(html).toContain("&quot;raw&quot;: true");
  });
});
