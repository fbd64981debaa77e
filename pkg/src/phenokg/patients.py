"""Patient records, cohort files, and the synthetic desk-scale simulator."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PatientDataError
from .kg import KnowledgeGraph, NodeType, graph_from_parts, k_hop_nodes
from . import kg as _kg

logger = logging.getLogger(__name__)


@dataclass
class PatientRecord:
    id: str
    phenotypes: list[str]
    candidate_genes: list[str] | None = None
    true_gene: str | None = None

    def __post_init__(self):
        if not self.phenotypes:
            raise PatientDataError(f"patient {self.id!r} has an empty phenotype list")
        self.phenotypes = list(dict.fromkeys(self.phenotypes))


def _resolve(graph: KnowledgeGraph, external_id: str, node_type: NodeType, patient_id: str, what: str) -> int:
    idx = graph.index_of(external_id)
    if idx is None:
        raise PatientDataError(f"patient {patient_id!r}: unknown {what} id {external_id!r}")
    if not graph.is_type(idx, node_type):
        raise PatientDataError(
            f"patient {patient_id!r}: {external_id!r} is a {graph.nodes[idx].node_type.value} node, not {node_type.value}"
        )
    return idx


def load_patients(file, graph: KnowledgeGraph) -> list[PatientRecord]:
    """Read a patients.jsonl cohort, resolving every id against the graph.

    Unknown phenotype or candidate-gene ids are errors.  Records whose true
    gene is missing from the graph are dropped with a warning, mirroring how
    such patients are excluded from training.
    """
    file = Path(file)
    records: list[PatientRecord] = []
    dropped = 0
    for line_no, raw in enumerate(file.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise PatientDataError(f"{file}:{line_no}: malformed JSON ({e.msg})") from None
        if not isinstance(obj, dict) or "id" not in obj or "positive_phenotypes" not in obj:
            raise PatientDataError(f"{file}:{line_no}: record needs 'id' and 'positive_phenotypes'")
        rec = PatientRecord(
            id=str(obj["id"]),
            phenotypes=[str(p) for p in obj["positive_phenotypes"]],
            candidate_genes=[str(g) for g in obj["candidate_genes"]] if obj.get("candidate_genes") is not None else None,
            true_gene=str(obj["true_gene"]) if obj.get("true_gene") is not None else None,
        )
        for p in rec.phenotypes:
            _resolve(graph, p, NodeType.PHENOTYPE, rec.id, "phenotype")
        if rec.candidate_genes is not None:
            for g in rec.candidate_genes:
                _resolve(graph, g, NodeType.GENE_PROTEIN, rec.id, "candidate gene")
        if rec.true_gene is not None and graph.index_of(rec.true_gene) is None:
            dropped += 1
            logger.warning("dropping patient %s: true gene %s is not in the graph", rec.id, rec.true_gene)
            continue
        records.append(rec)
    if dropped:
        logger.warning("dropped %d of %d patient records with out-of-graph true genes", dropped, dropped + len(records))
    return records


def save_patients(records: list[PatientRecord], file) -> None:
    with open(file, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"id": rec.id, "positive_phenotypes": rec.phenotypes}
            if rec.candidate_genes is not None:
                obj["candidate_genes"] = rec.candidate_genes
            if rec.true_gene is not None:
                obj["true_gene"] = rec.true_gene
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


@dataclass
class SimulatorConfig:
    """Knobs for the synthetic cohort generator.

    Phenotype counts follow a clamped normal (mean 7.9, sd 6.6, min 1,
    matching real rare-disease cohort statistics); the candidate list holds
    the causative gene plus ``distractor_candidates`` others, half of them
    drawn from genes that share phenotypes with the patient.
    """

    n_patients: int = 50
    phenotypes_mean: float = 7.9
    phenotypes_sd: float = 6.6
    noise_phenotypes: int = 0
    distractor_candidates: int = 19
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        for name in ("noise_phenotypes", "distractor_candidates"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _eligible_genes(graph: KnowledgeGraph) -> list[tuple[int, list[int]]]:
    """Genes paired with their phenotype neighborhoods within two hops."""
    phen_code = _kg._TYPE_CODE[NodeType.PHENOTYPE]
    out = []
    for g in graph.nodes_of_type(NodeType.GENE_PROTEIN):
        reach = k_hop_nodes(graph, [int(g)], 2)
        pool = sorted(i for i in reach if graph.type_codes[i] == phen_code)
        if pool:
            out.append((int(g), pool))
    return out


def simulate_cohort(graph: KnowledgeGraph, config: SimulatorConfig) -> list[PatientRecord]:
    """Generate a deterministic cohort of patients from the graph.

    Each patient gets a causative gene, phenotypes sampled from that gene's
    two-hop phenotype neighborhood (so inference-time extraction at k=2 can
    always reach the gene), optional uniform noise phenotypes, and a
    candidate list containing the true gene.
    """
    eligible = _eligible_genes(graph)
    if not eligible:
        raise PatientDataError("graph has no gene with a phenotype within two hops")
    all_genes = sorted(int(g) for g in graph.nodes_of_type(NodeType.GENE_PROTEIN))
    all_phens = sorted(int(p) for p in graph.nodes_of_type(NodeType.PHENOTYPE))

    records = []
    for i in range(config.n_patients):
        rng = np.random.default_rng([config.seed, i])
        gene, pool = eligible[int(rng.integers(len(eligible)))]
        count = int(np.clip(round(rng.normal(config.phenotypes_mean, config.phenotypes_sd)), 1, len(pool)))
        phens = sorted(int(p) for p in rng.choice(pool, size=count, replace=False))

        if config.noise_phenotypes:
            rest = [p for p in all_phens if p not in set(phens)]
            extra = min(config.noise_phenotypes, len(rest))
            phens += sorted(int(p) for p in rng.choice(rest, size=extra, replace=False))

        hard_pool = sorted(
            g for g in k_hop_nodes(graph, phens, 2)
            if graph.is_type(int(g), NodeType.GENE_PROTEIN) and int(g) != gene
        )
        n_hard = min(config.distractor_candidates // 2, len(hard_pool))
        chosen = set(int(g) for g in rng.choice(hard_pool, size=n_hard, replace=False)) if n_hard else set()
        uniform_pool = [g for g in all_genes if g != gene and g not in chosen]
        n_rest = min(config.distractor_candidates - len(chosen), len(uniform_pool))
        if n_rest:
            chosen |= set(int(g) for g in rng.choice(uniform_pool, size=n_rest, replace=False))

        candidates = [gene] + sorted(chosen)
        order = rng.permutation(len(candidates))
        records.append(
            PatientRecord(
                id=f"sim-{i:04d}",
                phenotypes=[graph.nodes[p].external_id for p in phens],
                candidate_genes=[graph.nodes[candidates[j]].external_id for j in order],
                true_gene=graph.nodes[gene].external_id,
            )
        )
    return records


def synthetic_graph(
    n_phenotypes: int = 140,
    n_genes: int = 60,
    n_diseases: int = 60,
    n_other: int = 40,
    seed: int = 0,
    edge_dim: int = 15,
) -> KnowledgeGraph:
    """Random desk-scale knowledge graph with learnable phenotype->gene structure.

    Every disease links one gene to a handful of phenotypes; extra edges add
    gene-gene interactions, phenotype co-occurrence, and pathway-style hub
    nodes so subgraphs are not trees.
    """
    rng = np.random.default_rng(seed)
    nodes: list[tuple[str, NodeType]] = []
    nodes += [(f"HP:{i:07d}", NodeType.PHENOTYPE) for i in range(n_phenotypes)]
    nodes += [(f"ENSG{i:011d}", NodeType.GENE_PROTEIN) for i in range(n_genes)]
    nodes += [(f"MONDO:{i:07d}", NodeType.DISEASE) for i in range(n_diseases)]
    other_types = [NodeType.PATHWAY, NodeType.MOLECULAR_FUNCTION, NodeType.CELLULAR_COMPONENT, NodeType.BIOLOGICAL_PROCESS]
    nodes += [(f"GO:{i:07d}", other_types[i % len(other_types)]) for i in range(n_other)]

    phen = list(range(n_phenotypes))
    gene = list(range(n_phenotypes, n_phenotypes + n_genes))
    disease = list(range(n_phenotypes + n_genes, n_phenotypes + n_genes + n_diseases))
    other = list(range(n_phenotypes + n_genes + n_diseases, len(nodes)))

    edges: list[tuple[int, int, int]] = []
    for j, d in enumerate(disease):
        g = gene[j % len(gene)]
        edges.append((d, g, 0))
        n_ph = int(rng.integers(3, 7))
        for p in rng.choice(phen, size=min(n_ph, len(phen)), replace=False):
            edges.append((d, int(p), 1))
            if rng.random() < 0.4:
                edges.append((g, int(p), 2))
    for _ in range(n_phenotypes // 2):
        a, b = rng.choice(phen, size=2, replace=False)
        edges.append((int(a), int(b), 3))
    for _ in range(n_genes // 2):
        a, b = rng.choice(gene, size=2, replace=False)
        edges.append((int(a), int(b), 4))
    for h in other:
        for g in rng.choice(gene, size=int(rng.integers(2, 5)), replace=False):
            edges.append((int(h), int(g), 5))

    return graph_from_parts(nodes, edges, edge_dim=edge_dim)
