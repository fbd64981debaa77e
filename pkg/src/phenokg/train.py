"""Batch training with AdamW, cosine warm restarts, early stopping on
validation MRR, and fully resumable checkpoints."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, PatientDataError, TrainingAborted
from .evaluate import rank, reciprocal_rank
from .kg import KnowledgeGraph, NodeType, PatientSubgraph, k_hop_nodes, patient_subgraph
from .losses import GeneLossConfig, MemoryBank, SimLossConfig, bank_push, gene_loss, patient_sim_loss, total_loss
from .model import ModelConfig, ModelParameters, forward, init_parameters
from .optim import AdamWState, CosineRestarts, adamw_step, lr_at
from .patients import PatientRecord

logger = logging.getLogger(__name__)

EMBEDDING_MODES = ("pretrained", "random", "phenotypes_only")


@dataclass
class TrainConfig:
    max_epochs: int = 135
    patience: int = 25
    batch_size: int = 8
    lr: float = 1e-4
    lr_min: float = 0.0
    t0: int = 10
    t_mult: int = 2
    weight_decay: float = 0.01
    use_gene_loss: bool = True
    use_sim_loss: bool = True
    embedding_mode: str = "pretrained"
    k: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in [1, max_epochs]")
        if self.embedding_mode not in EMBEDDING_MODES:
            raise ValueError(f"embedding_mode must be one of {EMBEDDING_MODES}")
        if not (self.use_gene_loss or self.use_sim_loss):
            raise ValueError("at least one loss arm must be enabled")


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    val_mrr: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_mrr: float = float("-inf")
    checkpoint_path: str = ""
    stopped_early: bool = False
    skipped_patients: list[str] = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.losses)

    def to_json_dict(self) -> dict:
        return {
            "losses": self.losses,
            "val_mrr": self.val_mrr,
            "lrs": self.lrs,
            "best_epoch": self.best_epoch,
            "best_mrr": self.best_mrr,
            "checkpoint_path": self.checkpoint_path,
            "stopped_early": self.stopped_early,
            "skipped_patients": self.skipped_patients,
        }


@dataclass
class _Item:
    record_id: str
    subgraph: PatientSubgraph
    true_position: int  # index into the candidate list
    label: int  # global gene index


def _feature_mode(embedding_mode: str) -> str:
    return "random" if embedding_mode == "random" else "pretrained"


def _own_only(embedding_mode: str) -> bool:
    return embedding_mode == "phenotypes_only"


def prepare_items(
    graph: KnowledgeGraph,
    patients: list[PatientRecord],
    embedding_mode: str,
    k: int,
    skipped: list[str] | None = None,
) -> list[_Item]:
    """Resolve records into cached subgraphs with true-gene positions.

    Records use shortest-path construction when a candidate list exists and
    k-hop harvesting otherwise; patients whose true gene is unreachable are
    skipped with a warning.
    """
    own_only = _own_only(embedding_mode)
    items: list[_Item] = []
    for record in patients:
        if record.true_gene is None:
            logger.warning("skipping patient %s: no true gene label", record.id)
            if skipped is not None:
                skipped.append(record.id)
            continue
        true_idx = graph.index_of(record.true_gene)
        if true_idx is None:
            logger.warning("skipping patient %s: true gene %s not in graph", record.id, record.true_gene)
            if skipped is not None:
                skipped.append(record.id)
            continue
        phen = []
        for p in record.phenotypes:
            idx = graph.index_of(p)
            if idx is None or not graph.is_type(idx, NodeType.PHENOTYPE):
                raise PatientDataError(f"patient {record.id!r}: unknown phenotype id {p!r}")
            phen.append(idx)
        blocked = None
        if own_only:
            blocked = frozenset(int(i) for i in graph.nodes_of_type(NodeType.PHENOTYPE)) - frozenset(phen)

        if record.candidate_genes is not None:
            if record.true_gene not in record.candidate_genes:
                raise PatientDataError(
                    f"patient {record.id!r}: true gene {record.true_gene} missing from its candidate list"
                )
            cand = [graph.index_of(g) for g in record.candidate_genes]
            if any(c is None for c in cand):
                bad = [g for g, c in zip(record.candidate_genes, cand) if c is None]
                raise PatientDataError(f"patient {record.id!r}: unknown candidate gene ids {bad}")
            reach = k_hop_nodes(graph, phen, graph.n_nodes, _blocked=blocked)
            kept = [c for c in cand if c in reach]
            if true_idx not in kept:
                logger.warning("skipping patient %s: true gene unreachable from phenotypes", record.id)
                if skipped is not None:
                    skipped.append(record.id)
                continue
            if len(kept) < len(cand):
                logger.warning("patient %s: dropped %d unreachable candidate(s)", record.id, len(cand) - len(kept))
            sub = patient_subgraph(graph, phen, kept, own_phenotypes_only=own_only)
        else:
            sub = patient_subgraph(graph, phen, None, k=k, own_phenotypes_only=own_only)

        cand_globals = [int(sub.local_to_global[c]) for c in sub.candidate_genes]
        if true_idx not in cand_globals:
            logger.warning("skipping patient %s: true gene outside the %d-hop neighborhood", record.id, k)
            if skipped is not None:
                skipped.append(record.id)
            continue
        true_local = sub.local_of(true_idx)
        sub.true_gene = true_local
        items.append(_Item(record.id, sub, cand_globals.index(true_idx), true_idx))
    return items


def _validation_mrr(graph: KnowledgeGraph, items: list[_Item], params: ModelParameters) -> float:
    """Mean reciprocal rank in eval mode; touches no training state."""
    if not items:
        return 0.0
    rrs = []
    for item in items:
        p, genes = forward(item.subgraph, params, train=False)
        p_unit = p.values / max(np.linalg.norm(p.values), 1e-12)
        g_unit = genes.values / np.maximum(np.linalg.norm(genes.values, axis=1, keepdims=True), 1e-12)
        gene_ids = [graph.nodes[int(item.subgraph.local_to_global[c])].external_id for c in item.subgraph.candidate_genes]
        true_id = graph.nodes[item.label].external_id
        rrs.append(reciprocal_rank(rank(p_unit, g_unit, gene_ids, item.record_id), true_id))
    return float(np.mean(rrs))


def _save_state(
    path: Path,
    params: ModelParameters,
    opt: AdamWState,
    bank: MemoryBank,
    rng: np.random.Generator,
    configs: dict,
    epoch: int,
    report: TrainReport,
) -> None:
    tensors = dict(params.arrays())
    for name, m in opt.m.items():
        tensors[f"opt.m.{name}"] = m
        tensors[f"opt.v.{name}"] = opt.v[name]
    tensors["bank.embeddings"] = bank.embeddings
    header = {
        "kind": "train_state",
        **configs,
        "epoch": epoch,
        "opt_step": opt.step,
        "rng_state": rng.bit_generator.state,
        "bank": bank.state(),
        "history": {
            "losses": report.losses,
            "val_mrr": report.val_mrr,
            "lrs": report.lrs,
            "best_epoch": report.best_epoch,
            "best_mrr": report.best_mrr,
            "stopped_early": report.stopped_early,
            "skipped_patients": report.skipped_patients,
        },
    }
    save_checkpoint(path, tensors, header, dtype="f8")


def load_model(path) -> tuple[ModelParameters, dict]:
    """Rebuild model parameters (and the header) from any checkpoint."""
    tensors, header = load_checkpoint(path)
    config = ModelConfig.from_dict(header["model"])
    params_arrays = {
        name: arr for name, arr in tensors.items() if not name.startswith(("opt.", "bank."))
    }
    wrapped = {name: ad.Tensor(arr, requires_grad=True) for name, arr in params_arrays.items()}
    return ModelParameters(wrapped, config, int(header["input_dim"])), header


def _configs_header(model_config, train_config, gene_config, sim_config, input_dim, n_graph_nodes) -> dict:
    return {
        "model": model_config.to_dict(),
        "train": dataclasses.asdict(train_config),
        "gene_loss": dataclasses.asdict(gene_config),
        "sim_loss": dataclasses.asdict(sim_config),
        "input_dim": input_dim,
        "n_graph_nodes": n_graph_nodes,
        "embedding_mode": train_config.embedding_mode,
    }


def _train_loop(
    graph: KnowledgeGraph,
    train_items: list[_Item],
    val_items: list[_Item],
    params: ModelParameters,
    opt: AdamWState,
    bank: MemoryBank,
    rng: np.random.Generator,
    train_config: TrainConfig,
    gene_config: GeneLossConfig,
    sim_config: SimLossConfig,
    out_dir: Path,
    configs: dict,
    report: TrainReport,
    start_epoch: int,
) -> TrainReport:
    schedule = CosineRestarts(train_config.t0, train_config.t_mult, train_config.lr, train_config.lr_min)
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    report.checkpoint_path = str(best_path)

    for epoch in range(start_epoch, train_config.max_epochs):
        lr = lr_at(schedule, epoch)
        order = rng.permutation(len(train_items))
        loss_sum = 0.0
        for lo in range(0, len(order), train_config.batch_size):
            batch = [train_items[i] for i in order[lo : lo + train_config.batch_size]]
            ad.zero_grads(t for _, t in params.items())
            gene_terms = []
            sim_inputs = []
            for item in batch:
                p, genes = forward(item.subgraph, params, train=True, rng=rng)
                if train_config.use_gene_loss:
                    term, _ = gene_loss(p, genes, item.true_position, gene_config, params.tau())
                    gene_terms.append(term)
                sim_inputs.append((ad.l2_normalize(p), item.label))
            gene_term = None
            if gene_terms:
                acc = gene_terms[0]
                for t in gene_terms[1:]:
                    acc = ad.add(acc, t)
                gene_term = ad.scale(acc, 1.0 / len(gene_terms))
            sim_term = patient_sim_loss(sim_inputs, bank, sim_config) if train_config.use_sim_loss else None
            try:
                loss = total_loss(gene_term, sim_term)
            except FloatingPointError as e:
                raise TrainingAborted(f"epoch {epoch}: non-finite loss in batch starting at {lo}: {e}") from None
            ad.backward(loss)
            try:
                adamw_step(params.tensors, opt, lr)
            except FloatingPointError as e:
                raise TrainingAborted(f"epoch {epoch}: {e}") from None
            params.clamp_tau()
            bank_push(bank, np.stack([t.values for t, _ in sim_inputs]), [l for _, l in sim_inputs])
            loss_sum += float(loss.values) * len(batch)

        epoch_loss = loss_sum / max(len(train_items), 1)
        val = _validation_mrr(graph, val_items, params)
        report.losses.append(epoch_loss)
        report.val_mrr.append(val)
        report.lrs.append(lr)
        print(f"{epoch}\t{epoch_loss:.6f}\t{val:.6f}\t{lr:.8g}")

        if val > report.best_mrr:
            report.best_mrr = val
            report.best_epoch = epoch
            _save_state(best_path, params, opt, bank, rng, configs, epoch, report)
        _save_state(last_path, params, opt, bank, rng, configs, epoch, report)

        if epoch - report.best_epoch >= train_config.patience:
            report.stopped_early = True
            _save_state(last_path, params, opt, bank, rng, configs, epoch, report)
            break

    from .reports import write_training_outputs

    write_training_outputs(report, out_dir)
    return report


def train(
    graph: KnowledgeGraph,
    train_patients: list[PatientRecord],
    val_patients: list[PatientRecord],
    out_dir,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    gene_config: GeneLossConfig | None = None,
    sim_config: SimLossConfig | None = None,
) -> TrainReport:
    """Train from scratch, writing best.ckpt / last.ckpt / report.json to ``out_dir``."""
    train_config = train_config or TrainConfig()
    gene_config = gene_config or GeneLossConfig()
    sim_config = sim_config or SimLossConfig()
    model_config = model_config or ModelConfig()
    if model_config.feature_mode != _feature_mode(train_config.embedding_mode):
        model_config = dataclasses.replace(model_config, feature_mode=_feature_mode(train_config.embedding_mode))
    if not train_patients:
        raise PatientDataError("training set is empty")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if model_config.feature_mode == "pretrained":
        if graph.embeddings is None:
            raise PatientDataError(
                f"embedding_mode={train_config.embedding_mode!r} needs graph embeddings; "
                "attach embeddings.bin or use embedding_mode='random'"
            )
        input_dim = graph.embeddings.shape[1]
    else:
        input_dim = model_config.random_feature_dim

    report = TrainReport()
    train_items = prepare_items(graph, train_patients, train_config.embedding_mode, train_config.k, report.skipped_patients)
    val_items = prepare_items(graph, val_patients, train_config.embedding_mode, train_config.k)
    if not train_items:
        raise PatientDataError("no trainable patient after skipping unreachable true genes")

    rng = np.random.default_rng(train_config.seed)
    params = init_parameters(model_config, input_dim, rng, n_graph_nodes=graph.n_nodes)
    opt = AdamWState(lr=train_config.lr, weight_decay=train_config.weight_decay)
    bank = MemoryBank(sim_config.capacity, model_config.gnn.out_dim)
    configs = _configs_header(model_config, train_config, gene_config, sim_config, params.input_dim, graph.n_nodes)
    return _train_loop(
        graph, train_items, val_items, params, opt, bank, rng,
        train_config, gene_config, sim_config, out_dir, configs, report, start_epoch=0,
    )


def resume(
    checkpoint_path,
    graph: KnowledgeGraph,
    train_patients: list[PatientRecord],
    val_patients: list[PatientRecord],
    out_dir,
    max_epochs: int | None = None,
) -> TrainReport:
    """Continue a saved run; bit-equivalent to never having stopped.

    All configuration comes from the checkpoint; only the epoch budget can be
    raised via ``max_epochs``.  A finished run (exhausted epochs or an
    already-triggered early stop) returns its report unchanged.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensors, header = load_checkpoint(checkpoint_path)
    if header.get("kind") != "train_state":
        raise CheckpointError(f"{checkpoint_path}: not a training-state checkpoint")
    model_config = ModelConfig.from_dict(header["model"])
    train_config = TrainConfig(**header["train"])
    if max_epochs is not None:
        train_config = dataclasses.replace(train_config, max_epochs=max_epochs)
    gene_config = GeneLossConfig(**header["gene_loss"])
    sim_config = SimLossConfig(**header["sim_loss"])
    input_dim = int(header["input_dim"])

    if model_config.feature_mode == "pretrained":
        if graph.embeddings is None:
            raise CheckpointError("checkpoint was trained with graph embeddings but none are attached")
        if graph.embeddings.shape[1] != input_dim:
            raise CheckpointError(
                f"dimension mismatch: checkpoint expects {input_dim}-dim node features, "
                f"graph has {graph.embeddings.shape[1]}"
            )
    elif "node_embeddings" in tensors and tensors["node_embeddings"].shape[0] != graph.n_nodes:
        raise CheckpointError(
            f"dimension mismatch: checkpoint node table has {tensors['node_embeddings'].shape[0]} rows, "
            f"graph has {graph.n_nodes} nodes"
        )

    params_arrays = {n: a for n, a in tensors.items() if not n.startswith(("opt.", "bank."))}
    params = ModelParameters(
        {n: ad.Tensor(a, requires_grad=True) for n, a in params_arrays.items()}, model_config, input_dim
    )
    opt = AdamWState(lr=train_config.lr, weight_decay=train_config.weight_decay, step=int(header["opt_step"]))
    for name in params_arrays:
        if f"opt.m.{name}" in tensors:
            opt.m[name] = tensors[f"opt.m.{name}"]
            opt.v[name] = tensors[f"opt.v.{name}"]
    bank = MemoryBank(sim_config.capacity, model_config.gnn.out_dim)
    if sim_config.capacity:
        bank.restore(tensors["bank.embeddings"], header["bank"])
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]

    hist = header["history"]
    report = TrainReport(
        losses=list(hist["losses"]),
        val_mrr=list(hist["val_mrr"]),
        lrs=list(hist["lrs"]),
        best_epoch=int(hist["best_epoch"]),
        best_mrr=float(hist["best_mrr"]),
        checkpoint_path=str(out_dir / "best.ckpt"),
        stopped_early=bool(hist["stopped_early"]),
        skipped_patients=list(hist["skipped_patients"]),
    )
    start_epoch = int(header["epoch"]) + 1
    if report.stopped_early or start_epoch >= train_config.max_epochs:
        logger.info("checkpoint is a finished run; nothing to resume")
        from .reports import write_training_outputs

        write_training_outputs(report, out_dir)
        return report

    train_items = prepare_items(graph, train_patients, train_config.embedding_mode, train_config.k)
    val_items = prepare_items(graph, val_patients, train_config.embedding_mode, train_config.k)
    configs = _configs_header(model_config, train_config, gene_config, sim_config, input_dim, graph.n_nodes)
    return _train_loop(
        graph, train_items, val_items, params, opt, bank, rng,
        train_config, gene_config, sim_config, out_dir, configs, report, start_epoch=start_epoch,
    )
