"""Ranking and retrieval metrics: MRR, nDCG@K, hits@j, and top-q patient match."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import PatientDataError
from .kg import KnowledgeGraph, NodeType, k_hop_nodes, patient_subgraph
from .model import ModelParameters, forward
from .patients import PatientRecord

logger = logging.getLogger(__name__)

NDCG_KS = (1, 3, 5, 10, 25, 50, 75, 100)
HITS_JS = (1, 3, 5, 10)
TOP_QS = (25, 50, 100, 170, 300, 500, 1000)


@dataclass
class RankedGeneList:
    patient_id: str
    entries: list[tuple[str, float]]  # (gene external id, score), descending

    def rank_of(self, gene: str) -> int | None:
        """1-based rank of ``gene``; None when absent."""
        for position, (gid, _) in enumerate(self.entries, start=1):
            if gid == gene:
                return position
        return None


def rank(patient_emb: np.ndarray, gene_embs: np.ndarray, gene_ids: list[str], patient_id: str = "") -> RankedGeneList:
    """Order candidates by dot-product score, ties by ascending gene id.

    Both embeddings are expected unit-normalized so the scores are cosines.
    """
    patient_emb = np.asarray(patient_emb, dtype=np.float64)
    gene_embs = np.asarray(gene_embs, dtype=np.float64)
    if gene_embs.ndim != 2 or len(gene_ids) != gene_embs.shape[0]:
        raise ValueError("gene embeddings and ids must align")
    if gene_embs.shape[1] != patient_emb.shape[0]:
        raise ValueError(f"dimension mismatch: genes {gene_embs.shape[1]} vs patient {patient_emb.shape[0]}")
    if len(set(gene_ids)) != len(gene_ids):
        raise ValueError("gene ids must be unique")
    scores = gene_embs @ patient_emb
    order = sorted(range(len(gene_ids)), key=lambda i: (-scores[i], gene_ids[i]))
    return RankedGeneList(patient_id, [(gene_ids[i], float(scores[i])) for i in order])


def reciprocal_rank(ranking: RankedGeneList, true_gene: str) -> float:
    """1/rank of the true gene; 0.0 when it is absent from the list."""
    position = ranking.rank_of(true_gene)
    return 0.0 if position is None else 1.0 / position


def ndcg_at_k(ranking: RankedGeneList, true_gene: str, k: int) -> float:
    """Single-relevant-item nDCG: 1/log2(rank+1) inside the cutoff, else 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    position = ranking.rank_of(true_gene)
    if position is None or position > k:
        return 0.0
    return 1.0 / math.log2(position + 1)


def hits_at(ranking: RankedGeneList, true_gene: str, j: int) -> float:
    """1.0 when the true gene appears within the top j entries."""
    if j < 1:
        raise ValueError("j must be >= 1")
    position = ranking.rank_of(true_gene)
    return 1.0 if position is not None and position <= j else 0.0


def top_q_match(
    test_embs: np.ndarray,
    test_labels,
    ref_embs: np.ndarray,
    ref_labels,
    qs,
    exclude_diagonal: bool = False,
) -> dict[int, float]:
    """Fraction of test patients whose q nearest reference patients (cosine)
    include one with the same causative gene.

    ``exclude_diagonal`` skips the (i, i) pairing for leave-one-out use when
    the test and reference sets are the same cohort.  q values beyond the
    reference size are clamped with a warning.
    """
    test_embs = np.asarray(test_embs, dtype=np.float64)
    ref_embs = np.asarray(ref_embs, dtype=np.float64)
    test_labels = np.asarray(test_labels)
    ref_labels = np.asarray(ref_labels)
    if len(ref_labels) == 0:
        raise ValueError("reference set must be nonempty")

    def unit(m):
        norms = np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-12)
        return m / norms

    sims = unit(test_embs) @ unit(ref_embs).T
    max_q = len(ref_labels) - (1 if exclude_diagonal else 0)
    out: dict[int, float] = {}
    ordered_per_test = []
    for i in range(len(test_labels)):
        keys = [(-sims[i, j], j) for j in range(len(ref_labels)) if not (exclude_diagonal and j == i)]
        keys.sort()
        ordered_per_test.append([j for _, j in keys])
    for q in qs:
        q_eff = int(q)
        if q_eff > max_q:
            logger.warning("top_q_match: q=%d clamped to reference size %d", q_eff, max_q)
            q_eff = max_q
        hits = 0
        for i, order in enumerate(ordered_per_test):
            top = order[:q_eff]
            if any(ref_labels[j] == test_labels[i] for j in top):
                hits += 1
        out[int(q)] = hits / len(test_labels) if len(test_labels) else 0.0
    return out


@dataclass
class PatientResult:
    id: str
    rank: int | None
    excluded: bool
    reciprocal_rank: float = 0.0


@dataclass
class EvaluationReport:
    mrr: float
    ndcg: dict[int, float]
    hits: dict[int, float]
    top_q: dict[int, float]
    patients: list[PatientResult]
    mode: str = "candidates"

    @property
    def n_evaluated(self) -> int:
        return sum(1 for p in self.patients if not p.excluded)

    @property
    def n_excluded(self) -> int:
        return sum(1 for p in self.patients if p.excluded)

    def to_json_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "hits": {str(j): v for j, v in self.hits.items()},
            "top_q": {str(q): v for q, v in self.top_q.items()},
            "patients": [{"id": p.id, "rank": p.rank, "excluded": p.excluded} for p in self.patients],
        }


def _resolve_patient(graph: KnowledgeGraph, record: PatientRecord) -> tuple[list[int], list[int] | None, int]:
    phen = []
    for p in record.phenotypes:
        idx = graph.index_of(p)
        if idx is None or not graph.is_type(idx, NodeType.PHENOTYPE):
            raise PatientDataError(f"patient {record.id!r}: unknown phenotype id {p!r}")
        phen.append(idx)
    cand = None
    if record.candidate_genes is not None:
        cand = []
        for g in record.candidate_genes:
            idx = graph.index_of(g)
            if idx is None or not graph.is_type(idx, NodeType.GENE_PROTEIN):
                raise PatientDataError(f"patient {record.id!r}: unknown gene id {g!r}")
            cand.append(idx)
    if record.true_gene is None:
        raise PatientDataError(f"patient {record.id!r} has no true gene; cannot evaluate")
    true_idx = graph.index_of(record.true_gene)
    if true_idx is None:
        raise PatientDataError(f"patient {record.id!r}: true gene {record.true_gene!r} not in graph")
    return phen, cand, true_idx


def score_patient(
    graph: KnowledgeGraph,
    params: ModelParameters,
    record: PatientRecord,
    mode: str,
    k: int = 2,
    own_phenotypes_only: bool = False,
) -> tuple[RankedGeneList | None, np.ndarray | None]:
    """Rank one patient's candidates; (None, None) when nothing is rankable.

    Candidate mode drops unreachable candidates with a warning; k-hop mode
    harvests every gene in the phenotype neighborhood.
    """
    phen, cand, _ = _resolve_patient(graph, record)
    if mode == "candidates":
        if cand is None:
            raise PatientDataError(f"patient {record.id!r} has no candidate list; use k-hop mode")
        blocked = None
        if own_phenotypes_only:
            blocked = frozenset(int(i) for i in graph.nodes_of_type(NodeType.PHENOTYPE)) - frozenset(phen)
        reach = k_hop_nodes(graph, phen, graph.n_nodes, _blocked=blocked)
        kept = [c for c in cand if c in reach]
        if len(kept) < len(cand):
            logger.warning("patient %s: %d unreachable candidate(s) dropped", record.id, len(cand) - len(kept))
        if not kept:
            return None, None
        sub = patient_subgraph(graph, phen, kept, own_phenotypes_only=own_phenotypes_only)
    elif mode == "khop":
        sub = patient_subgraph(graph, phen, None, k=k, own_phenotypes_only=own_phenotypes_only)
        if len(sub.candidate_genes) == 0:
            return None, None
    else:
        raise ValueError(f"unknown evaluation mode {mode!r} (use 'candidates' or 'khop')")

    p, genes = forward(sub, params, train=False)
    p_unit = p.values / max(np.linalg.norm(p.values), 1e-12)
    g_norms = np.maximum(np.linalg.norm(genes.values, axis=1, keepdims=True), 1e-12)
    g_unit = genes.values / g_norms
    gene_ids = [graph.nodes[int(sub.local_to_global[c])].external_id for c in sub.candidate_genes]
    return rank(p_unit, g_unit, gene_ids, patient_id=record.id), p_unit


def evaluate(
    graph: KnowledgeGraph,
    patients: list[PatientRecord],
    params: ModelParameters,
    mode: str = "candidates",
    k: int = 2,
    own_phenotypes_only: bool = False,
    ndcg_ks=NDCG_KS,
    hits_js=HITS_JS,
    top_qs=TOP_QS,
) -> EvaluationReport:
    """Score a labeled cohort and aggregate every ranking metric.

    Patients whose true gene cannot enter the candidate pool are excluded
    (and counted) in k-hop mode; in candidate mode an absent true gene keeps
    the patient with reciprocal rank 0.  The top-q match curve is computed
    leave-one-out within the evaluated cohort.
    """
    results: list[PatientResult] = []
    embeddings: list[np.ndarray] = []
    labels: list[int] = []
    rr_list: list[float] = []
    ndcg_lists: dict[int, list[float]] = {kk: [] for kk in ndcg_ks}
    hits_lists: dict[int, list[float]] = {j: [] for j in hits_js}

    for record in patients:
        _, _, true_idx = _resolve_patient(graph, record)
        ranking, embedding = score_patient(graph, params, record, mode, k=k, own_phenotypes_only=own_phenotypes_only)
        if ranking is None:
            results.append(PatientResult(record.id, None, True))
            continue
        position = ranking.rank_of(record.true_gene)
        if mode == "khop" and position is None:
            results.append(PatientResult(record.id, None, True))
            continue
        rr = reciprocal_rank(ranking, record.true_gene)
        rr_list.append(rr)
        for kk in ndcg_ks:
            ndcg_lists[kk].append(ndcg_at_k(ranking, record.true_gene, kk))
        for j in hits_js:
            hits_lists[j].append(hits_at(ranking, record.true_gene, j))
        embeddings.append(embedding)
        labels.append(true_idx)
        results.append(PatientResult(record.id, position, False, reciprocal_rank=rr))

    n_eval = len(rr_list)
    if n_eval == 0:
        logger.warning("no patient could be evaluated; metrics are all zero")
    mrr = float(np.mean(rr_list)) if n_eval else 0.0
    ndcg = {kk: (float(np.mean(v)) if v else 0.0) for kk, v in ndcg_lists.items()}
    hits = {j: (float(np.mean(v)) if v else 0.0) for j, v in hits_lists.items()}
    if n_eval >= 2:
        top_q = top_q_match(np.stack(embeddings), labels, np.stack(embeddings), labels, top_qs, exclude_diagonal=True)
    else:
        top_q = {int(q): 0.0 for q in top_qs}
    return EvaluationReport(mrr=mrr, ndcg=ndcg, hits=hits, top_q=top_q, patients=results, mode=mode)
