import { ApiClient } from "./api.js";
import { RankingController } from "./controller.js";
import type { SessionState } from "./state.js";
import { renderError, renderRanking } from "./view.js";

const baseUrl = new URLSearchParams(location.search).get("api") ?? "http://127.0.0.1:8350";
const api = new ApiClient(baseUrl);

const searchBox = document.getElementById("search") as HTMLInputElement;
const suggestions = document.getElementById("suggestions") as HTMLUListElement;
const selected = document.getElementById("selected") as HTMLUListElement;
const candidatesBox = document.getElementById("candidates") as HTMLTextAreaElement;
const panel = document.getElementById("ranking") as HTMLDivElement;
const status = document.getElementById("status") as HTMLSpanElement;

function render(state: SessionState): void {
  selected.innerHTML = state.phenotypes
    .map((p) => `<li><button data-phenotype="${p}" title="remove">${p} &times;</button></li>`)
    .join("");
  status.textContent = state.inFlight ? "ranking…" : "";
  if (state.error !== null) {
    panel.innerHTML = renderError(state.error);
    return;
  }
  if (state.lastResponse === null) {
    panel.innerHTML = '<p class="notice">add a phenotype to see a ranking</p>';
    return;
  }
  panel.innerHTML = renderRanking(state.lastResponse, state.previousRanks);
}

const controller = new RankingController(api, render);
render(controller.state);

let searchTimer: ReturnType<typeof setTimeout> | undefined;
searchBox.addEventListener("input", () => {
  clearTimeout(searchTimer);
  searchTimer = setTimeout(async () => {
    const query = searchBox.value.trim();
    try {
      const matches = await api.searchPhenotypes(query, 10);
      suggestions.innerHTML = matches
        .map((m) => `<li><button data-add="${m.id}">${m.id}</button></li>`)
        .join("");
    } catch {
      suggestions.innerHTML = "<li>search unavailable</li>";
    }
  }, 150);
});

suggestions.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  const id = target.dataset.add;
  if (id) void controller.togglePhenotype(id);
});

selected.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  const id = target.dataset.phenotype;
  if (id) void controller.togglePhenotype(id);
});

candidatesBox.addEventListener("change", () => {
  const text = candidatesBox.value.trim();
  void controller.setCandidates(text ? text.split(/[\s,]+/) : null);
});

panel.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  if (target.dataset.action === "retry") void controller.retry();
});
