export type RankRequest = {
  phenotypes: string[];
  candidate_genes?: string[];
  k?: number;
  top?: number;
};

export type RankEntry = { gene: string; score: number };

export type RankResponse = {
  ranking: RankEntry[];
  subgraph: { nodes: number; edges: number };
  excluded: boolean;
};

export type PhenotypeMatch = { id: string; index: number };

export class ApiError extends Error {
  constructor(message: string, public status: number, public payload: unknown) {
    super(message);
  }
}

export class SchemaError extends Error {
  constructor(message: string, public payload: unknown) {
    super(message);
  }
}

function isRankResponse(value: unknown): value is RankResponse {
  if (typeof value !== "object" || value === null) return false;
  const v = value as Record<string, unknown>;
  if (typeof v.excluded !== "boolean" || !Array.isArray(v.ranking)) return false;
  const sub = v.subgraph as Record<string, unknown> | undefined;
  if (typeof sub !== "object" || sub === null) return false;
  if (typeof sub.nodes !== "number" || typeof sub.edges !== "number") return false;
  return (v.ranking as unknown[]).every((e) => {
    if (typeof e !== "object" || e === null) return false;
    const entry = e as Record<string, unknown>;
    return typeof entry.gene === "string" && typeof entry.score === "number";
  });
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(private baseUrl: string, private fetchFn: FetchLike = fetch.bind(globalThis)) {}

  async searchPhenotypes(query: string, limit = 10): Promise<PhenotypeMatch[]> {
    const url = `${this.baseUrl}/phenotypes?q=${encodeURIComponent(query)}&limit=${limit}`;
    const resp = await this.fetchFn(url);
    const payload = await resp.json();
    if (!resp.ok) {
      throw new ApiError(`phenotype search failed (${resp.status})`, resp.status, payload);
    }
    return (payload as { matches: PhenotypeMatch[] }).matches;
  }

  async rank(request: RankRequest): Promise<RankResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/rank`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    const payload = await resp.json();
    if (!resp.ok) {
      const message =
        typeof payload === "object" && payload !== null && "error" in payload
          ? String((payload as { error: unknown }).error)
          : `ranking failed (${resp.status})`;
      throw new ApiError(message, resp.status, payload);
    }
    if (!isRankResponse(payload)) {
      throw new SchemaError("response does not match the ranking schema", payload);
    }
    return payload;
  }
}
