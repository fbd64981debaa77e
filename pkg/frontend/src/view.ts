import type { RankResponse } from "./api.js";

export interface RankedRow {
  position: number;
  gene: string;
  score: number;
  /** previous rank minus current rank: +3 means the gene moved up three. */
  delta: number | null;
}

/** Rows in exactly the server's order; scores are never reordered or rescaled. */
export function buildRows(response: RankResponse, previousRanks: Map<string, number> | null): RankedRow[] {
  return response.ranking.map((entry, i) => {
    const position = i + 1;
    const prev = previousRanks?.get(entry.gene);
    return {
      position,
      gene: entry.gene,
      score: entry.score,
      delta: prev === undefined ? null : prev - position,
    };
  });
}

export function deltaLabel(delta: number | null): string {
  if (delta === null) return "new";
  if (delta === 0) return "=";
  return delta > 0 ? `+${delta}` : `${delta}`;
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderRanking(response: RankResponse, previousRanks: Map<string, number> | null): string {
  if (response.excluded) {
    return '<p class="notice">no reachable candidate genes for this phenotype set</p>';
  }
  const rows = buildRows(response, previousRanks)
    .map(
      (row) =>
        `<tr><td>${row.position}</td><td>${escapeHtml(row.gene)}</td>` +
        `<td>${row.score.toFixed(4)}</td><td>${deltaLabel(row.delta)}</td></tr>`,
    )
    .join("");
  const stats = `${response.subgraph.nodes} nodes, ${response.subgraph.edges} edges`;
  return (
    `<p class="stats">subgraph: ${stats}</p>` +
    `<table><thead><tr><th>rank</th><th>gene</th><th>score</th><th>&Delta;</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>`
  );
}

export function renderError(message: string, payload?: unknown): string {
  const raw = payload === undefined ? "" : `<pre class="raw">${escapeHtml(JSON.stringify(payload, null, 2))}</pre>`;
  return `<div class="error"><p>${escapeHtml(message)}</p><button data-action="retry">retry</button>${raw}</div>`;
}
