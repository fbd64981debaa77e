"""HTTP ranking service over an immutable (graph, model) snapshot.

Three endpoints back the interactive UI: GET /health, GET /phenotypes for
autocomplete, and POST /rank.  The snapshot is loaded before the listener
opens and never mutated, so requests are handled concurrently without locks
and identical requests always produce identical responses.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from .evaluate import rank
from .kg import KnowledgeGraph, NodeType, k_hop_nodes, patient_subgraph
from .model import ModelParameters, forward

logger = logging.getLogger(__name__)

DEFAULT_ADDR = "127.0.0.1:8350"
ADDR_ENV_VAR = "PHENOKG_ADDR"


def search_phenotypes(graph: KnowledgeGraph, query: str, limit: int = 10) -> list[tuple[str, int]]:
    """Case-insensitive substring match over phenotype external ids.

    Results are sorted by external id, so an empty query returns the first
    ``limit`` phenotype ids.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    needle = query.lower()
    matches = [
        (graph.nodes[int(i)].external_id, int(i))
        for i in graph.nodes_of_type(NodeType.PHENOTYPE)
        if needle in graph.nodes[int(i)].external_id.lower()
    ]
    matches.sort(key=lambda m: m[0])
    return matches[:limit]


@dataclass
class ServiceContext:
    graph: KnowledgeGraph
    params: ModelParameters
    own_phenotypes_only: bool = False
    default_k: int = 2


def serve_rank(ctx: ServiceContext, payload: dict) -> tuple[int, dict]:
    """Validate one ranking request and score it; returns (status, body)."""
    if not isinstance(payload, dict):
        return 422, {"error": "request body must be a JSON object"}
    phenotypes = payload.get("phenotypes")
    if not isinstance(phenotypes, list) or not phenotypes or not all(isinstance(p, str) for p in phenotypes):
        return 422, {"error": "'phenotypes' must be a nonempty list of ids"}
    k = payload.get("k", ctx.default_k)
    if not isinstance(k, int) or isinstance(k, bool) or not 1 <= k <= 4:
        return 422, {"error": "'k' must be an integer in [1, 4]"}
    top = payload.get("top")
    if top is not None and (not isinstance(top, int) or isinstance(top, bool) or top < 1):
        return 422, {"error": "'top' must be a positive integer"}

    graph = ctx.graph
    unknown = [
        p for p in dict.fromkeys(phenotypes)
        if graph.index_of(p) is None or not graph.is_type(graph.index_of(p), NodeType.PHENOTYPE)
    ]
    if unknown:
        return 422, {"error": "unknown phenotype ids", "unknown_phenotypes": unknown}
    phen = [graph.index_of(p) for p in dict.fromkeys(phenotypes)]

    candidates = payload.get("candidate_genes")
    cand_idx = None
    if candidates is not None:
        if not isinstance(candidates, list) or not all(isinstance(g, str) for g in candidates):
            return 422, {"error": "'candidate_genes' must be a list of gene ids"}
        unknown_genes = [
            g for g in dict.fromkeys(candidates)
            if graph.index_of(g) is None or not graph.is_type(graph.index_of(g), NodeType.GENE_PROTEIN)
        ]
        if unknown_genes:
            return 422, {"error": "unknown gene ids", "unknown_genes": unknown_genes}
        cand_idx = [graph.index_of(g) for g in dict.fromkeys(candidates)]

    blocked = None
    if ctx.own_phenotypes_only:
        blocked = frozenset(int(i) for i in graph.nodes_of_type(NodeType.PHENOTYPE)) - frozenset(phen)
    if cand_idx is not None:
        reach = k_hop_nodes(graph, phen, graph.n_nodes, _blocked=blocked)
        cand_idx = [c for c in cand_idx if c in reach]
        if not cand_idx:
            return 200, {"ranking": [], "subgraph": {"nodes": 0, "edges": 0}, "excluded": True}
        sub = patient_subgraph(graph, phen, cand_idx, own_phenotypes_only=ctx.own_phenotypes_only)
    else:
        sub = patient_subgraph(graph, phen, None, k=k, own_phenotypes_only=ctx.own_phenotypes_only)
        if len(sub.candidate_genes) == 0:
            return 200, {
                "ranking": [],
                "subgraph": {"nodes": sub.n_nodes, "edges": sub.n_edges},
                "excluded": True,
            }

    p, genes = forward(sub, ctx.params, train=False)
    p_unit = p.values / max(np.linalg.norm(p.values), 1e-12)
    g_unit = genes.values / np.maximum(np.linalg.norm(genes.values, axis=1, keepdims=True), 1e-12)
    gene_ids = [graph.nodes[int(sub.local_to_global[c])].external_id for c in sub.candidate_genes]
    ranking = rank(p_unit, g_unit, gene_ids)
    entries = ranking.entries if top is None else ranking.entries[:top]
    return 200, {
        "ranking": [{"gene": gid, "score": score} for gid, score in entries],
        "subgraph": {"nodes": sub.n_nodes, "edges": sub.n_edges},
        "excluded": False,
    }


def _make_handler(ctx: ServiceContext):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            logger.debug("http: " + fmt, *args)

        def _reply(self, status: int, payload: dict) -> None:
            blob = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(blob)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(blob)

        def do_OPTIONS(self):  # CORS preflight for the browser UI
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.end_headers()

        def do_GET(self):
            url = urlparse(self.path)
            if url.path == "/health":
                self._reply(200, {"status": "ok"})
                return
            if url.path == "/phenotypes":
                query = parse_qs(url.query)
                q = query.get("q", [""])[0]
                try:
                    limit = int(query.get("limit", ["10"])[0])
                    matches = search_phenotypes(ctx.graph, q, limit)
                except ValueError as e:
                    self._reply(422, {"error": str(e)})
                    return
                self._reply(200, {"matches": [{"id": ext, "index": idx} for ext, idx in matches]})
                return
            self._reply(404, {"error": f"no such path {url.path!r}"})

        def do_POST(self):
            url = urlparse(self.path)
            if url.path != "/rank":
                self._reply(404, {"error": f"no such path {url.path!r}"})
                return
            length = int(self.headers.get("Content-Length", "0"))
            try:
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError):
                self._reply(400, {"error": "request body is not valid JSON"})
                return
            status, body = serve_rank(ctx, payload)
            self._reply(status, body)

    return Handler


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host, int(port)


def resolve_addr(flag: str | None, env: dict | None = None) -> str:
    """Listen address: --addr flag wins over $PHENOKG_ADDR, then the default."""
    if flag:
        return flag
    env = os.environ if env is None else env
    return env.get(ADDR_ENV_VAR) or DEFAULT_ADDR


def make_server(ctx: ServiceContext, addr: str = DEFAULT_ADDR) -> ThreadingHTTPServer:
    """Bind (but do not run) the service; use serve_forever() to block."""
    return ThreadingHTTPServer(parse_addr(addr), _make_handler(ctx))
