"""Typed knowledge graph: loading, validation, and patient-subgraph extraction.

The graph is undirected and immutable after load.  Each edge is stored once
(canonical endpoint order) with an integer relation kind that is expanded to a
one-hot attribute vector of dimension ``edge_dim`` on demand.  Subgraph
extraction walks the graph with plain BFS; all tie-breaking is by node index
so every operation is deterministic.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import GraphFormatError, UnreachableCandidateError

logger = logging.getLogger(__name__)

EMBEDDINGS_MAGIC = b"PKGE"


class NodeType(enum.Enum):
    PHENOTYPE = "Phenotype"
    DISEASE = "Disease"
    GENE_PROTEIN = "GeneProtein"
    PATHWAY = "Pathway"
    MOLECULAR_FUNCTION = "MolecularFunction"
    CELLULAR_COMPONENT = "CellularComponent"
    BIOLOGICAL_PROCESS = "BiologicalProcess"


_TYPE_BY_NAME = {t.value: t for t in NodeType}
_TYPE_CODE = {t: i for i, t in enumerate(NodeType)}


@dataclass(frozen=True)
class NodeRef:
    index: int
    external_id: str
    node_type: NodeType


@dataclass
class KnowledgeGraph:
    """Immutable node/edge store with optional node embeddings."""

    nodes: list[NodeRef]
    edge_src: np.ndarray  # canonical endpoint order: src < dst
    edge_dst: np.ndarray
    edge_rel: np.ndarray
    edge_dim: int
    embeddings: np.ndarray | None = None
    _index_by_id: dict[str, int] = field(default_factory=dict, repr=False)
    _adjacency: list[np.ndarray] | None = field(default=None, repr=False)
    _type_codes: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edge_src)

    @property
    def type_codes(self) -> np.ndarray:
        if self._type_codes is None:
            codes = np.fromiter((_TYPE_CODE[n.node_type] for n in self.nodes), dtype=np.int8, count=self.n_nodes)
            object.__setattr__(self, "_type_codes", codes)
        return self._type_codes

    def index_of(self, external_id: str) -> int | None:
        return self._index_by_id.get(external_id)

    def neighbors(self, index: int) -> np.ndarray:
        """Neighbor indices of ``index``, sorted ascending."""
        return self._adj()[index]

    def _adj(self) -> list[np.ndarray]:
        if self._adjacency is None:
            lists: list[list[int]] = [[] for _ in range(self.n_nodes)]
            for u, v in zip(self.edge_src.tolist(), self.edge_dst.tolist()):
                lists[u].append(v)
                lists[v].append(u)
            adj = [np.unique(np.asarray(l, dtype=np.int64)) for l in lists]
            object.__setattr__(self, "_adjacency", adj)
        return self._adjacency

    def nodes_of_type(self, node_type: NodeType) -> np.ndarray:
        return np.flatnonzero(self.type_codes == _TYPE_CODE[node_type])

    def is_type(self, index: int, node_type: NodeType) -> bool:
        return self.nodes[index].node_type is node_type

    def one_hot_edge_attrs(self, rel: np.ndarray) -> np.ndarray:
        out = np.zeros((len(rel), self.edge_dim), dtype=np.float64)
        out[np.arange(len(rel)), rel] = 1.0
        return out


@dataclass
class PatientSubgraph:
    """A locally reindexed fragment of the global graph.

    ``phenotype_mask`` marks the nodes the patient encoder pools over; for
    pipeline-built subgraphs that is the patient's own phenotype terms, for a
    raw ``induce_subgraph`` call it defaults to every phenotype-typed node.
    """

    local_to_global: np.ndarray
    edge_src: np.ndarray  # local indices, canonical order
    edge_dst: np.ndarray
    edge_attrs: np.ndarray  # |E_p| x d_e one-hot
    phenotype_mask: np.ndarray
    gene_mask: np.ndarray
    candidate_genes: np.ndarray  # local indices, sorted
    true_gene: int | None = None
    features: np.ndarray | None = None
    _messages: tuple[np.ndarray, np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.local_to_global)

    @property
    def n_edges(self) -> int:
        return len(self.edge_src)

    def local_of(self, global_index: int) -> int | None:
        pos = np.searchsorted(self.local_to_global, global_index)
        if pos < self.n_nodes and self.local_to_global[pos] == global_index:
            return int(pos)
        return None

    def message_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Directed message triples (src, dst, edge attrs) for the GNN.

        Each undirected edge yields both directions; nodes without any
        incident edge get a self-message with zero attributes so attention
        stays well defined.
        """
        if self._messages is None:
            src = np.concatenate([self.edge_src, self.edge_dst])
            dst = np.concatenate([self.edge_dst, self.edge_src])
            attrs = np.concatenate([self.edge_attrs, self.edge_attrs], axis=0)
            degree = np.bincount(dst, minlength=self.n_nodes) if len(dst) else np.zeros(self.n_nodes, dtype=np.int64)
            isolated = np.flatnonzero(degree == 0)
            if len(isolated):
                src = np.concatenate([src, isolated])
                dst = np.concatenate([dst, isolated])
                attrs = np.concatenate([attrs, np.zeros((len(isolated), self.edge_attrs.shape[1]))], axis=0)
            self._messages = (src.astype(np.int64), dst.astype(np.int64), attrs)
        return self._messages


# ---------------------------------------------------------------------------
# loading and persistence
# ---------------------------------------------------------------------------


def _parse_int(text: str, what: str, line_no: int, path) -> int:
    try:
        return int(text)
    except ValueError:
        raise GraphFormatError(f"{path}:{line_no}: {what} is not an integer: {text!r}") from None


def load_graph(node_file, edge_file, edge_dim: int = 15) -> KnowledgeGraph:
    """Read nodes.tsv / edges.tsv and return a validated graph.

    Node lines are ``index<TAB>external_id<TAB>node_type``; edge lines are
    ``src<TAB>dst<TAB>relation_kind``.  A header line is skipped when its
    first field is not an integer.  Relation kinds must fit the one-hot
    attribute dimension ``edge_dim``.
    """
    node_file, edge_file = Path(node_file), Path(edge_file)
    rows: list[tuple[int, str, NodeType]] = []
    for line_no, raw in enumerate(node_file.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise GraphFormatError(f"{node_file}:{line_no}: expected 3 tab-separated fields, got {len(parts)}")
        if line_no == 1 and not parts[0].strip().lstrip("-").isdigit():
            continue  # header
        idx = _parse_int(parts[0], "node index", line_no, node_file)
        ext = parts[1].strip()
        if not ext:
            raise GraphFormatError(f"{node_file}:{line_no}: empty external_id")
        node_type = _TYPE_BY_NAME.get(parts[2].strip())
        if node_type is None:
            raise GraphFormatError(
                f"{node_file}:{line_no}: unknown node_type {parts[2].strip()!r} "
                f"(expected one of {sorted(_TYPE_BY_NAME)})"
            )
        rows.append((idx, ext, node_type))
    if not rows:
        raise GraphFormatError(f"{node_file}: no node rows")

    rows.sort(key=lambda r: r[0])
    seen_ids: dict[str, int] = {}
    nodes: list[NodeRef] = []
    for position, (idx, ext, node_type) in enumerate(rows):
        if idx != position:
            raise GraphFormatError(f"{node_file}: node indices must be unique and contiguous from 0; missing or duplicate index {position}")
        if ext in seen_ids:
            raise GraphFormatError(f"{node_file}: duplicate external_id {ext!r} (indices {seen_ids[ext]} and {idx})")
        seen_ids[ext] = idx
        nodes.append(NodeRef(idx, ext, node_type))
    n = len(nodes)

    src_list: list[int] = []
    dst_list: list[int] = []
    rel_list: list[int] = []
    seen_edges: set[tuple[int, int, int]] = set()
    for line_no, raw in enumerate(edge_file.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise GraphFormatError(f"{edge_file}:{line_no}: expected 3 tab-separated fields, got {len(parts)}")
        if line_no == 1 and not parts[0].strip().lstrip("-").isdigit():
            continue
        u = _parse_int(parts[0], "src index", line_no, edge_file)
        v = _parse_int(parts[1], "dst index", line_no, edge_file)
        rel = _parse_int(parts[2], "relation kind", line_no, edge_file)
        for endpoint in (u, v):
            if not 0 <= endpoint < n:
                raise GraphFormatError(f"{edge_file}:{line_no}: dangling edge endpoint {endpoint} (graph has {n} nodes)")
        if u == v:
            raise GraphFormatError(f"{edge_file}:{line_no}: self-loop on node {u} is not allowed")
        if rel < 0 or rel >= edge_dim:
            raise GraphFormatError(
                f"{edge_file}:{line_no}: relation kind {rel} does not fit edge_dim={edge_dim}; "
                "raise edge_dim to accept more relation kinds"
            )
        key = (min(u, v), max(u, v), rel)
        if key in seen_edges:
            continue
        seen_edges.add(key)
        src_list.append(key[0])
        dst_list.append(key[1])
        rel_list.append(rel)

    return KnowledgeGraph(
        nodes=nodes,
        edge_src=np.asarray(src_list, dtype=np.int64),
        edge_dst=np.asarray(dst_list, dtype=np.int64),
        edge_rel=np.asarray(rel_list, dtype=np.int64),
        edge_dim=edge_dim,
        _index_by_id=seen_ids,
    )


def graph_from_parts(
    node_specs: list[tuple[str, NodeType]],
    edges: list[tuple[int, int, int]],
    edge_dim: int = 15,
) -> KnowledgeGraph:
    """Build a graph in memory; same validation rules as ``load_graph``."""
    nodes = []
    index_by_id: dict[str, int] = {}
    for i, (ext, node_type) in enumerate(node_specs):
        if ext in index_by_id:
            raise GraphFormatError(f"duplicate external_id {ext!r}")
        index_by_id[ext] = i
        nodes.append(NodeRef(i, ext, node_type))
    n = len(nodes)
    seen: set[tuple[int, int, int]] = set()
    src_list, dst_list, rel_list = [], [], []
    for u, v, rel in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"dangling edge endpoint in ({u}, {v})")
        if u == v:
            raise GraphFormatError(f"self-loop on node {u} is not allowed")
        if rel < 0 or rel >= edge_dim:
            raise GraphFormatError(f"relation kind {rel} does not fit edge_dim={edge_dim}")
        key = (min(u, v), max(u, v), rel)
        if key in seen:
            continue
        seen.add(key)
        src_list.append(key[0])
        dst_list.append(key[1])
        rel_list.append(rel)
    return KnowledgeGraph(
        nodes=nodes,
        edge_src=np.asarray(src_list, dtype=np.int64),
        edge_dst=np.asarray(dst_list, dtype=np.int64),
        edge_rel=np.asarray(rel_list, dtype=np.int64),
        edge_dim=edge_dim,
        _index_by_id=index_by_id,
    )


def save_graph_files(graph: KnowledgeGraph, out_dir) -> None:
    """Write nodes.tsv, edges.tsv, and embeddings.bin (if present)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "nodes.tsv", "w", encoding="utf-8") as fh:
        for node in graph.nodes:
            fh.write(f"{node.index}\t{node.external_id}\t{node.node_type.value}\n")
    with open(out_dir / "edges.tsv", "w", encoding="utf-8") as fh:
        for u, v, r in zip(graph.edge_src, graph.edge_dst, graph.edge_rel):
            fh.write(f"{u}\t{v}\t{r}\n")
    if graph.embeddings is not None:
        write_embeddings(out_dir / "embeddings.bin", graph.embeddings)


def write_embeddings(path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError("embedding matrix must be 2D")
    n, d = matrix.shape
    with open(path, "wb") as fh:
        fh.write(EMBEDDINGS_MAGIC)
        fh.write(np.asarray([n, d], dtype="<u4").tobytes())
        fh.write(matrix.astype("<f4").tobytes())


def attach_embeddings(graph: KnowledgeGraph, emb_file) -> KnowledgeGraph:
    """Return a copy of ``graph`` carrying the embedding matrix from ``emb_file``.

    A missing file leaves the graph without embeddings (the model falls back
    to its own learnable node features in that configuration).
    """
    emb_file = Path(emb_file)
    if not emb_file.exists():
        logger.info("embedding file %s not found; graph left without node features", emb_file)
        return graph
    blob = emb_file.read_bytes()
    if len(blob) < 12 or blob[:4] != EMBEDDINGS_MAGIC:
        raise GraphFormatError(f"{emb_file}: not an embeddings file (bad magic)")
    n, d = (int(x) for x in np.frombuffer(blob[4:12], dtype="<u4"))
    if d <= 0:
        raise GraphFormatError(f"{emb_file}: embedding dimension must be positive, got {d}")
    if n != graph.n_nodes:
        raise GraphFormatError(f"{emb_file}: header says {n} nodes but graph has {graph.n_nodes}")
    expected = 12 + 4 * n * d
    if len(blob) != expected:
        raise GraphFormatError(f"{emb_file}: truncated payload ({len(blob)} bytes, expected {expected})")
    matrix = np.frombuffer(blob[12:], dtype="<f4").reshape(n, d).astype(np.float64)
    return replace(graph, embeddings=matrix)


# ---------------------------------------------------------------------------
# traversal
# ---------------------------------------------------------------------------


def _check_indices(graph: KnowledgeGraph, indices, what: str) -> list[int]:
    out = sorted({int(i) for i in indices})
    for i in out:
        if not 0 <= i < graph.n_nodes:
            raise ValueError(f"invalid {what} index {i} (graph has {graph.n_nodes} nodes)")
    return out


def _bfs_dist(graph: KnowledgeGraph, seeds, blocked: frozenset[int] | None = None, max_depth: int | None = None) -> np.ndarray:
    """Hop distance from the seed set; -1 where unreachable (or blocked)."""
    dist = np.full(graph.n_nodes, -1, dtype=np.int64)
    queue: deque[int] = deque()
    for s in sorted(set(int(x) for x in seeds)):
        if blocked and s in blocked:
            continue
        dist[s] = 0
        queue.append(s)
    while queue:
        u = queue.popleft()
        if max_depth is not None and dist[u] >= max_depth:
            continue
        for v in graph.neighbors(u):
            v = int(v)
            if dist[v] == -1 and not (blocked and v in blocked):
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def k_hop_nodes(graph: KnowledgeGraph, seeds, k: int, _blocked: frozenset[int] | None = None) -> set[int]:
    """All nodes within ``k`` hops of the seed set (the seeds themselves at k=0)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    seed_list = _check_indices(graph, seeds, "seed")
    dist = _bfs_dist(graph, seed_list, blocked=_blocked, max_depth=k)
    return set(int(i) for i in np.flatnonzero((dist >= 0) & (dist <= k)))


def candidate_genes_from_khop(graph: KnowledgeGraph, phenotypes, k: int, _blocked: frozenset[int] | None = None) -> list[int]:
    """Gene nodes within ``k`` hops of the phenotype set, sorted by index."""
    seeds = _check_indices(graph, phenotypes, "phenotype")
    for s in seeds:
        if not graph.is_type(s, NodeType.PHENOTYPE):
            raise ValueError(f"seed {s} ({graph.nodes[s].external_id}) is not a Phenotype node")
    reach = k_hop_nodes(graph, seeds, k, _blocked=_blocked)
    gene_code = _TYPE_CODE[NodeType.GENE_PROTEIN]
    return [i for i in sorted(reach) if graph.type_codes[i] == gene_code]


def _lex_shortest_path(graph: KnowledgeGraph, start: int, dist_to_target: np.ndarray, blocked: frozenset[int] | None) -> list[int]:
    """Lexicographically smallest minimal-hop path, walking the distance field."""
    path = [start]
    remaining = int(dist_to_target[start])
    u = start
    while remaining > 0:
        for v in graph.neighbors(u):  # ascending, so first feasible is smallest
            v = int(v)
            if blocked and v in blocked:
                continue
            if dist_to_target[v] == remaining - 1:
                u = v
                break
        else:  # pragma: no cover - inconsistent distance field
            raise RuntimeError("shortest-path walk lost the distance gradient")
        path.append(u)
        remaining -= 1
    return path


def _components(node_set: list[int], graph: KnowledgeGraph) -> list[set[int]]:
    members = set(node_set)
    unvisited = set(node_set)
    comps = []
    while unvisited:
        root = min(unvisited)
        comp = {root}
        queue = deque([root])
        unvisited.discard(root)
        while queue:
            u = queue.popleft()
            for v in graph.neighbors(u):
                v = int(v)
                if v in members and v in unvisited:
                    unvisited.discard(v)
                    comp.add(v)
                    queue.append(v)
        comps.append(comp)
    return comps


def shortest_path_subgraph(
    graph: KnowledgeGraph,
    phenotypes,
    candidates,
    _blocked: frozenset[int] | None = None,
) -> PatientSubgraph:
    """Union of one shortest path per (phenotype, candidate) pair, made connected.

    For every pair the lexicographically smallest minimal-hop path is taken.
    If the union still splits into components, the component holding the
    lowest node index is repeatedly joined to its nearest other component via
    a global shortest path.  Phenotypes that are globally disconnected from
    every candidate cannot be joined and are dropped with a warning.
    """
    phen = _check_indices(graph, phenotypes, "phenotype")
    cand = _check_indices(graph, candidates, "candidate")
    if not phen:
        raise ValueError("phenotype set must be nonempty")
    if not cand:
        raise ValueError("candidate set must be nonempty")

    dist_from_phen = _bfs_dist(graph, phen, blocked=_blocked)
    for c in cand:
        if dist_from_phen[c] < 0:
            raise UnreachableCandidateError(
                f"candidate {graph.nodes[c].external_id} is unreachable from every phenotype"
            )

    node_set: set[int] = set(phen) | set(cand)
    for c in cand:
        dist_to_c = _bfs_dist(graph, [c], blocked=_blocked)
        for p in phen:
            if dist_to_c[p] < 0:
                continue  # this particular pair is unreachable; others cover c
            node_set.update(_lex_shortest_path(graph, p, dist_to_c, _blocked))

    # Connectivity fill: join components through global shortest paths.
    cand_set = set(cand)
    comps = _components(sorted(node_set), graph)
    while len(comps) > 1:
        comps.sort(key=min)
        base = comps[0]
        others = set().union(*comps[1:])
        dist = _bfs_dist(graph, sorted(base), blocked=_blocked)
        reachable = [t for t in sorted(others) if dist[t] >= 0]
        if reachable:
            target = min(reachable, key=lambda t: (dist[t], t))
            dist_to_target = _bfs_dist(graph, [target], blocked=_blocked)
            best_src = min(base, key=lambda s: (dist_to_target[s], s))
            node_set.update(_lex_shortest_path(graph, best_src, dist_to_target, _blocked))
        else:
            # Globally unconnectable split; keep the candidate-bearing side.
            drop = base if not (base & cand_set) else others
            logger.warning(
                "dropping %d globally disconnected node(s) from patient subgraph: %s",
                len(drop),
                sorted(graph.nodes[i].external_id for i in drop),
            )
            node_set -= drop
        comps = _components(sorted(node_set), graph)

    sub = induce_subgraph(graph, node_set)
    phen_mask = np.zeros(sub.n_nodes, dtype=bool)
    phen_mask[[sub.local_of(p) for p in phen if p in node_set]] = True
    sub.phenotype_mask = phen_mask
    sub.candidate_genes = np.asarray(sorted(sub.local_of(c) for c in cand if c in node_set), dtype=np.int64)
    return sub


def induce_subgraph(graph: KnowledgeGraph, node_set) -> PatientSubgraph:
    """Restrict the graph to ``node_set`` with dense local reindexing.

    Every global edge whose endpoints both fall in the set appears exactly
    once.  The phenotype mask defaults to all phenotype-typed nodes and the
    candidate list to all gene-typed nodes; pipeline callers narrow both.
    """
    locals_ = np.asarray(_check_indices(graph, node_set, "node"), dtype=np.int64)
    if len(locals_) == 0:
        raise ValueError("node set must be nonempty")
    lookup = {int(g): i for i, g in enumerate(locals_)}
    keep = np.isin(graph.edge_src, locals_) & np.isin(graph.edge_dst, locals_)
    gsrc = graph.edge_src[keep]
    gdst = graph.edge_dst[keep]
    rel = graph.edge_rel[keep]
    lsrc = np.asarray([lookup[int(u)] for u in gsrc], dtype=np.int64)
    ldst = np.asarray([lookup[int(v)] for v in gdst], dtype=np.int64)
    swap = lsrc > ldst
    lsrc[swap], ldst[swap] = ldst[swap], lsrc[swap]

    codes = graph.type_codes[locals_]
    phen_mask = codes == _TYPE_CODE[NodeType.PHENOTYPE]
    gene_mask = codes == _TYPE_CODE[NodeType.GENE_PROTEIN]
    features = graph.embeddings[locals_] if graph.embeddings is not None else None
    return PatientSubgraph(
        local_to_global=locals_,
        edge_src=lsrc,
        edge_dst=ldst,
        edge_attrs=graph.one_hot_edge_attrs(rel),
        phenotype_mask=phen_mask,
        gene_mask=gene_mask,
        candidate_genes=np.flatnonzero(gene_mask).astype(np.int64),
        features=features,
    )


def patient_subgraph(
    graph: KnowledgeGraph,
    phenotypes,
    candidates=None,
    k: int = 2,
    own_phenotypes_only: bool = False,
) -> PatientSubgraph:
    """Build the per-patient subgraph used by training, evaluation, and serving.

    With a candidate list the shortest-path construction is used; without one
    the k-hop neighborhood of the phenotypes is induced and every gene inside
    it becomes a candidate (the list may be empty if none is reachable).
    ``own_phenotypes_only`` hides all phenotype nodes except the patient's own
    terms from the traversal, for models trained on patient phenotypes alone.
    """
    phen = _check_indices(graph, phenotypes, "phenotype")
    for p in phen:
        if not graph.is_type(p, NodeType.PHENOTYPE):
            raise ValueError(f"{graph.nodes[p].external_id} is not a Phenotype node")
    blocked: frozenset[int] | None = None
    if own_phenotypes_only:
        blocked = frozenset(int(i) for i in graph.nodes_of_type(NodeType.PHENOTYPE)) - frozenset(phen)

    if candidates is not None:
        sub = shortest_path_subgraph(graph, phen, candidates, _blocked=blocked)
    else:
        reach = k_hop_nodes(graph, phen, k, _blocked=blocked)
        sub = induce_subgraph(graph, reach)
        phen_mask = np.zeros(sub.n_nodes, dtype=bool)
        phen_mask[[sub.local_of(p) for p in phen]] = True
        sub.phenotype_mask = phen_mask
        sub.candidate_genes = np.flatnonzero(sub.gene_mask).astype(np.int64)
    return sub
