import type { RankResponse } from "./api.js";

export interface SessionState {
  /** Ordered, deduplicated phenotype selection. */
  phenotypes: string[];
  /** Optional pasted candidate list; null means k-hop harvesting. */
  candidateGenes: string[] | null;
  k: number;
  lastResponse: RankResponse | null;
  /** gene -> 1-based rank in the response before lastResponse. */
  previousRanks: Map<string, number> | null;
  inFlight: boolean;
  error: string | null;
}

export function initialState(): SessionState {
  return {
    phenotypes: [],
    candidateGenes: null,
    k: 2,
    lastResponse: null,
    previousRanks: null,
    inFlight: false,
    error: null,
  };
}

/** Add the id if absent, remove it if present; order of the rest is kept. */
export function togglePhenotype(state: SessionState, id: string): SessionState {
  const phenotypes = state.phenotypes.includes(id)
    ? state.phenotypes.filter((p) => p !== id)
    : [...state.phenotypes, id];
  return { ...state, phenotypes };
}

export function setCandidateGenes(state: SessionState, genes: string[] | null): SessionState {
  const cleaned = genes === null ? null : [...new Set(genes.map((g) => g.trim()).filter(Boolean))];
  return { ...state, candidateGenes: cleaned && cleaned.length ? cleaned : null };
}

export function ranksOf(response: RankResponse): Map<string, number> {
  return new Map(response.ranking.map((entry, i) => [entry.gene, i + 1]));
}

/** Install a fresh ranking, remembering the old one for delta arrows. */
export function applyResponse(state: SessionState, response: RankResponse): SessionState {
  return {
    ...state,
    lastResponse: response,
    previousRanks: state.lastResponse ? ranksOf(state.lastResponse) : null,
    inFlight: false,
    error: null,
  };
}

export function clearRanking(state: SessionState): SessionState {
  return { ...state, lastResponse: null, previousRanks: null, inFlight: false, error: null };
}
