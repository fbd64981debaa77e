import { ApiClient, SchemaError } from "./api.js";
import {
  SessionState,
  applyResponse,
  clearRanking,
  initialState,
  setCandidateGenes,
  togglePhenotype,
} from "./state.js";

/**
 * Session controller with latest-wins request handling: every state change
 * that needs a re-rank bumps a sequence number, and a response is applied
 * only if no newer request was issued meanwhile.  Stale responses (and stale
 * errors) are discarded, so the rendered ranking always matches the final
 * request.
 */
export class RankingController {
  state: SessionState = initialState();
  private sequence = 0;

  constructor(
    private api: ApiClient,
    private onChange: (state: SessionState) => void = () => {},
  ) {}

  private emit(state: SessionState): void {
    this.state = state;
    this.onChange(state);
  }

  async togglePhenotype(id: string): Promise<void> {
    const next = togglePhenotype(this.state, id);
    if (next.phenotypes.length === 0) {
      this.sequence += 1; // invalidate anything in flight
      this.emit(clearRanking(next));
      return;
    }
    await this.rerank(next);
  }

  async setCandidates(genes: string[] | null): Promise<void> {
    const next = setCandidateGenes(this.state, genes);
    if (next.phenotypes.length === 0) {
      this.emit(next);
      return;
    }
    await this.rerank(next);
  }

  /** Re-issue the current request after a failure. */
  async retry(): Promise<void> {
    if (this.state.phenotypes.length === 0) return;
    await this.rerank(this.state);
  }

  private async rerank(base: SessionState): Promise<void> {
    const ticket = ++this.sequence;
    this.emit({ ...base, inFlight: true, error: null });
    try {
      const response = await this.api.rank({
        phenotypes: base.phenotypes,
        candidate_genes: base.candidateGenes ?? undefined,
        k: base.k,
      });
      if (ticket !== this.sequence) return; // superseded: discard
      this.emit(applyResponse(this.state, response));
    } catch (err) {
      if (ticket !== this.sequence) return; // stale failure: ignore
      const message =
        err instanceof SchemaError
          ? `schema violation: ${err.message}`
          : err instanceof Error
            ? err.message
            : String(err);
      // ranking state is kept as-is; the banner offers a retry
      this.emit({ ...this.state, inFlight: false, error: message });
    }
  }
}
