"""Phenotype-driven causative-gene prioritization over a biomedical knowledge graph."""

from .errors import (
    CheckpointError,
    DataError,
    GraphFormatError,
    PatientDataError,
    TrainingAborted,
    UnreachableCandidateError,
)
from .kg import (
    KnowledgeGraph,
    NodeRef,
    NodeType,
    PatientSubgraph,
    attach_embeddings,
    candidate_genes_from_khop,
    induce_subgraph,
    k_hop_nodes,
    load_graph,
    patient_subgraph,
    shortest_path_subgraph,
)
from .patients import PatientRecord, SimulatorConfig, load_patients, save_patients, simulate_cohort, synthetic_graph

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "DataError",
    "GraphFormatError",
    "KnowledgeGraph",
    "NodeRef",
    "NodeType",
    "PatientDataError",
    "PatientRecord",
    "PatientSubgraph",
    "SimulatorConfig",
    "TrainingAborted",
    "UnreachableCandidateError",
    "attach_embeddings",
    "candidate_genes_from_khop",
    "induce_subgraph",
    "k_hop_nodes",
    "load_graph",
    "load_patients",
    "patient_subgraph",
    "save_patients",
    "shortest_path_subgraph",
    "simulate_cohort",
    "synthetic_graph",
    "__version__",
]
