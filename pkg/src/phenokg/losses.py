"""Training objectives: the gene triplet loss with semi-hard mining and the
memory-bank patient-similarity loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

logger = logging.getLogger(__name__)


@dataclass
class GeneLossConfig:
    margin: float = 0.3
    reg_weight: float = 0.03

    def __post_init__(self):
        if self.margin < 0 or self.reg_weight < 0:
            raise ValueError("margin and reg_weight must be non-negative")


@dataclass
class SimLossConfig:
    temperature: float = 0.5
    margin: float = 0.8
    capacity: int = 1024

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.margin <= 1.0:
            raise ValueError("margin must lie in [0, 1]")
        if self.capacity < 0:
            raise ValueError("capacity must be >= 0")


class MemoryBank:
    """Fixed-capacity circular store of (patient embedding, gene label) pairs."""

    def __init__(self, capacity: int, dim: int):
        self.capacity = capacity
        self.dim = dim
        self.embeddings = np.zeros((capacity, dim), dtype=np.float64)
        self.labels = np.zeros(capacity, dtype=np.int64)
        self.cursor = 0
        self.size = 0

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        """Stored entries ordered oldest to newest."""
        if self.size < self.capacity:
            return self.embeddings[: self.size].copy(), self.labels[: self.size].copy()
        order = np.concatenate([np.arange(self.cursor, self.capacity), np.arange(self.cursor)])
        return self.embeddings[order].copy(), self.labels[order].copy()

    def state(self) -> dict:
        return {"cursor": self.cursor, "size": self.size, "labels": self.labels.tolist()}

    def restore(self, embeddings: np.ndarray, state: dict) -> None:
        self.embeddings[:] = embeddings
        self.labels[:] = np.asarray(state["labels"], dtype=np.int64)
        self.cursor = int(state["cursor"])
        self.size = int(state["size"])


def bank_push(bank: MemoryBank, embeddings: np.ndarray, labels) -> MemoryBank:
    """Write a batch into the bank, overwriting the oldest entries."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(embeddings) != len(labels):
        raise ValueError("embeddings and labels must have the same count")
    if bank.capacity == 0:
        if len(embeddings):
            logger.warning("memory bank has capacity 0; push ignored")
        return bank
    for emb, label in zip(embeddings, labels):
        bank.embeddings[bank.cursor] = emb
        bank.labels[bank.cursor] = label
        bank.cursor = (bank.cursor + 1) % bank.capacity
        bank.size = min(bank.size + 1, bank.capacity)
    return bank


def select_negative(sims: np.ndarray, true_index: int, margin: float) -> int | None:
    """Pick the training negative for one patient.

    Semi-hard candidates are negatives with similarity below the positive's
    similarity minus the margin; the highest-similarity one wins.  With no
    semi-hard candidate the globally hardest negative is used.  Returns None
    when the true gene is the only candidate.
    """
    count = len(sims)
    if not 0 <= true_index < count:
        raise ValueError(f"true_index {true_index} out of range for {count} candidates")
    negatives = np.asarray([i for i in range(count) if i != true_index])
    if len(negatives) == 0:
        return None
    threshold = sims[true_index] - margin
    semi = negatives[sims[negatives] < threshold]
    pool = semi if len(semi) else negatives
    return int(pool[np.argmax(sims[pool])])


def gene_loss(
    patient: Tensor,
    genes: Tensor,
    true_index: int,
    config: GeneLossConfig,
    tau: Tensor,
) -> tuple[Tensor, np.ndarray]:
    """Margin triplet loss over temperature-scaled cosine similarities.

    Embeddings are unit-normalized before the similarities; the norm
    regularizer sees the raw encoder outputs, where deviation from unit norm
    is still observable.  Returns the scalar loss and the similarity vector.
    """
    if genes.values.ndim != 2 or genes.values.shape[0] < 1:
        raise ValueError("genes must be a nonempty L x d matrix")
    count = genes.values.shape[0]
    if not 0 <= true_index < count:
        raise ValueError(f"true_index {true_index} out of range for {count} candidates")

    sims = ad.div(ad.matmul(ad.l2_normalize(genes), ad.l2_normalize(patient)), tau)
    sim_values = sims.values.copy()

    neg = select_negative(sim_values, true_index, config.margin)
    if neg is None:
        triplet = Tensor(0.0)
    else:
        picked = ad.gather_rows(sims, np.asarray([neg, true_index]))
        diff = ad.sub(ad.gather_rows(picked, np.asarray([0])), ad.gather_rows(picked, np.asarray([1])))
        triplet = ad.sum_(ad.relu(ad.add(diff, config.margin)))

    patient_norm = ad.sqrt(ad.sum_(ad.mul(patient, patient)))
    gene_norms = ad.sqrt(ad.sum_(ad.mul(genes, genes), axis=1))
    reg = ad.scale(ad.abs_(ad.sub(ad.add(patient_norm, ad.mean(gene_norms)), 2.0)), config.reg_weight)
    return ad.add(triplet, reg), sim_values


def patient_sim_loss(
    batch: list[tuple[Tensor, int]],
    bank: MemoryBank,
    config: SimLossConfig,
) -> Tensor:
    """Pull same-gene patient pairs together, push different-gene pairs apart.

    Within-batch pairs (i < j) and batch-vs-bank pairs form four groups
    (pull/push x within/cross); each group is averaged over its own pair
    count and empty groups contribute exactly zero.  Batch embeddings must be
    unit-normalized; bank entries are stored normalized and detached.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    inv_alpha = 1.0 / config.temperature
    push_floor = 1.0 - config.margin

    pull_terms: list[Tensor] = []
    push_terms: list[Tensor] = []
    for i in range(len(batch)):
        for j in range(i + 1, len(batch)):
            sim = ad.dot(batch[i][0], batch[j][0])
            if batch[i][1] == batch[j][1]:
                pull_terms.append(ad.neg(ad.log_sigmoid(ad.scale(sim, inv_alpha))))
            else:
                push_terms.append(ad.relu(ad.sub(sim, push_floor)))

    def group_mean(terms: list[Tensor]) -> Tensor | None:
        if not terms:
            return None
        acc = terms[0]
        for t in terms[1:]:
            acc = ad.add(acc, t)
        return ad.scale(acc, 1.0 / len(terms))

    total = Tensor(0.0)
    for part in (group_mean(pull_terms), group_mean(push_terms)):
        if part is not None:
            total = ad.add(total, part)

    bank_embs, bank_labels = bank.snapshot()
    if len(bank_labels):
        cross_pull: list[Tensor] = []
        cross_push: list[Tensor] = []
        bank_const = Tensor(bank_embs)
        for emb, label in batch:
            sims = ad.matmul(bank_const, emb)
            same = np.flatnonzero(bank_labels == label)
            diff = np.flatnonzero(bank_labels != label)
            if len(same):
                picked = ad.gather_rows(sims, same)
                cross_pull.append(ad.sum_(ad.neg(ad.log_sigmoid(ad.scale(picked, inv_alpha)))))
            if len(diff):
                picked = ad.gather_rows(sims, diff)
                cross_push.append(ad.sum_(ad.relu(ad.sub(picked, push_floor))))
        n_same = sum(int((bank_labels == label).sum()) for _, label in batch)
        n_diff = len(batch) * len(bank_labels) - n_same
        for terms, count in ((cross_pull, n_same), (cross_push, n_diff)):
            if terms and count:
                acc = terms[0]
                for t in terms[1:]:
                    acc = ad.add(acc, t)
                total = ad.add(total, ad.scale(acc, 1.0 / count))
    return total


def total_loss(gene_term: Tensor | None, sim_term: Tensor | None) -> Tensor:
    """Unweighted sum of the enabled loss arms; a disabled arm contributes 0."""
    total = Tensor(0.0)
    for term in (gene_term, sim_term):
        if term is None:
            continue
        if not np.isfinite(term.values).all():
            raise FloatingPointError("non-finite loss term")
        total = ad.add(total, term)
    return total
