"""The ranking network: GATv2 over the patient subgraph, a memory-augmented
patient encoder, and a set-transformer gene encoder.

All parameters live in a flat name -> Tensor dict so the optimizer and the
checkpoint format can treat them uniformly.  Multi-head blocks keep one
weight matrix per head; heads are processed as plain 2D matmuls and then
concatenated, which keeps the autodiff core free of 3D tensors.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kg import PatientSubgraph

TAU_LOG_MIN = math.log(1e-3)
TAU_LOG_MAX = math.log(10.0)


@dataclass
class GnnConfig:
    layers: int = 3
    heads: int = 2
    hidden_dims: tuple[int, ...] = (1024, 256)
    out_dim: int = 512
    dropout: float = 0.4
    negative_slope: float = 0.2
    edge_dim: int = 15

    def __post_init__(self):
        self.hidden_dims = tuple(self.hidden_dims)
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if len(self.hidden_dims) != self.layers - 1:
            raise ValueError(f"{self.layers} layers need {self.layers - 1} hidden dims, got {len(self.hidden_dims)}")
        for d in self.hidden_dims:
            if d % self.heads:
                raise ValueError(f"hidden dim {d} is not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class PatientEncoderConfig:
    memory_slots: int = 128
    heads: int = 4
    pheno_hidden: int = 512
    patient_hidden: int = 512

    def __post_init__(self):
        if self.memory_slots < 0:
            raise ValueError("memory_slots must be >= 0")


@dataclass
class GeneEncoderConfig:
    layers: int = 4
    heads: int = 8
    ff_dim: int = 2048


@dataclass
class ModelConfig:
    gnn: GnnConfig = field(default_factory=GnnConfig)
    patient: PatientEncoderConfig = field(default_factory=PatientEncoderConfig)
    gene: GeneEncoderConfig = field(default_factory=GeneEncoderConfig)
    tau_init: float = 0.12
    feature_mode: str = "pretrained"  # "pretrained" or "random"
    random_feature_dim: int = 512

    def __post_init__(self):
        if self.feature_mode not in ("pretrained", "random"):
            raise ValueError(f"unknown feature_mode {self.feature_mode!r}")
        d = self.gnn.out_dim
        if d % self.patient.heads:
            raise ValueError(f"embedding dim {d} not divisible by {self.patient.heads} patient-attention heads")
        if d % self.gene.heads:
            raise ValueError(f"embedding dim {d} not divisible by {self.gene.heads} gene-encoder heads")
        if self.tau_init <= 0:
            raise ValueError("tau_init must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(
            gnn=GnnConfig(**obj["gnn"]),
            patient=PatientEncoderConfig(**obj["patient"]),
            gene=GeneEncoderConfig(**obj["gene"]),
            tau_init=obj["tau_init"],
            feature_mode=obj["feature_mode"],
            random_feature_dim=obj["random_feature_dim"],
        )


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class ModelParameters:
    """Flat named-parameter store; insertion order is the optimizer order."""

    def __init__(self, tensors: dict[str, Tensor], config: ModelConfig, input_dim: int):
        self.tensors = tensors
        self.config = config
        self.input_dim = input_dim

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def tau(self) -> Tensor:
        return ad.exp(self.tensors["log_tau"])

    def clamp_tau(self) -> None:
        t = self.tensors["log_tau"]
        t.values = np.clip(t.values, TAU_LOG_MIN, TAU_LOG_MAX)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.values for name, t in self.tensors.items()}


def init_parameters(
    config: ModelConfig,
    input_dim: int,
    rng: np.random.Generator,
    n_graph_nodes: int | None = None,
) -> ModelParameters:
    """Create all learnable tensors.

    ``input_dim`` is the node-feature width (pretrained embedding width, or
    ``config.random_feature_dim`` when the model owns its node features, in
    which case ``n_graph_nodes`` sizes the learnable table).
    """
    g = config.gnn
    d = g.out_dim
    t: dict[str, Tensor] = {}

    def param(name: str, values) -> None:
        t[name] = Tensor(values, requires_grad=True)

    if config.feature_mode == "random":
        if n_graph_nodes is None:
            raise ValueError("feature_mode='random' needs n_graph_nodes")
        input_dim = config.random_feature_dim
        param("node_embeddings", rng.normal(0.0, 1.0 / math.sqrt(input_dim), size=(n_graph_nodes, input_dim)))

    dims = [input_dim, *g.hidden_dims, d]
    for layer in range(g.layers):
        d_prev = dims[layer]
        final = layer == g.layers - 1
        head_dim = d if final else dims[layer + 1] // g.heads
        att_in = 2 * d_prev + g.edge_dim
        for h in range(g.heads):
            param(f"gnn.{layer}.h{h}.att_w", _xavier(rng, att_in, head_dim, (att_in, head_dim)))
            param(f"gnn.{layer}.h{h}.att_a", _xavier(rng, head_dim, 1, (head_dim,)))
            param(f"gnn.{layer}.h{h}.val_w", _xavier(rng, d_prev, head_dim, (d_prev, head_dim)))
        if not final:
            width = dims[layer + 1]
            param(f"gnn.{layer}.ln_gain", np.ones(width))
            param(f"gnn.{layer}.ln_bias", np.zeros(width))
    param("proj.w", _xavier(rng, d, d, (d, d)))
    param("proj.b", np.zeros(d))

    p = config.patient
    param("pheno.0.w", _xavier(rng, d, p.pheno_hidden, (d, p.pheno_hidden)))
    param("pheno.0.b", np.zeros(p.pheno_hidden))
    param("pheno.1.w", _xavier(rng, p.pheno_hidden, d, (p.pheno_hidden, d)))
    param("pheno.1.b", np.zeros(d))
    if p.memory_slots:
        param("memory", rng.normal(0.0, 1.0, size=(p.memory_slots, d)))
    head_dim = d // p.heads
    param("pmha.ln_gain", np.ones(d))
    param("pmha.ln_bias", np.zeros(d))
    for h in range(p.heads):
        for proj in ("wq", "wk", "wv"):
            param(f"pmha.h{h}.{proj}", _xavier(rng, d, head_dim, (d, head_dim)))
    param("pmha.wo", _xavier(rng, d, d, (d, d)))
    param("pmha.bo", np.zeros(d))
    param("patient.0.w", _xavier(rng, d, p.patient_hidden, (d, p.patient_hidden)))
    param("patient.0.b", np.zeros(p.patient_hidden))
    param("patient.1.w", _xavier(rng, p.patient_hidden, d, (p.patient_hidden, d)))
    param("patient.1.b", np.zeros(d))

    e = config.gene
    head_dim = d // e.heads
    for layer in range(e.layers):
        pre = f"gene.{layer}"
        param(f"{pre}.ln1_gain", np.ones(d))
        param(f"{pre}.ln1_bias", np.zeros(d))
        for h in range(e.heads):
            for proj in ("wq", "wk", "wv"):
                param(f"{pre}.h{h}.{proj}", _xavier(rng, d, head_dim, (d, head_dim)))
        param(f"{pre}.wo", _xavier(rng, d, d, (d, d)))
        param(f"{pre}.bo", np.zeros(d))
        param(f"{pre}.ln2_gain", np.ones(d))
        param(f"{pre}.ln2_bias", np.zeros(d))
        param(f"{pre}.ff1_w", _xavier(rng, d, e.ff_dim, (d, e.ff_dim)))
        param(f"{pre}.ff1_b", np.zeros(e.ff_dim))
        param(f"{pre}.ff2_w", _xavier(rng, e.ff_dim, d, (e.ff_dim, d)))
        param(f"{pre}.ff2_b", np.zeros(d))
    param("gene.ln_f_gain", np.ones(d))
    param("gene.ln_f_bias", np.zeros(d))

    param("log_tau", np.asarray(math.log(config.tau_init)))
    return ModelParameters(t, config, input_dim)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def gatv2_layer(
    features: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    edge_attrs: np.ndarray,
    params: ModelParameters,
    layer: int,
    combine: str,
    return_attention: bool = False,
):
    """One multi-head GATv2 pass over directed messages src -> dst.

    Per head the attention logit for a message is a^T LeakyReLU(W [h_dst ||
    h_src || e]) normalized over each destination's incoming messages; the
    message payload is the value-projected source feature.  Heads are
    concatenated for hidden layers and averaged for the final one.
    """
    if edge_attrs.shape[1] != params.config.gnn.edge_dim:
        raise ValueError(
            f"edge attribute dim {edge_attrs.shape[1]} != configured {params.config.gnn.edge_dim}"
        )
    n = features.shape[0]
    slope = params.config.gnn.negative_slope
    h_dst = ad.gather_rows(features, dst)
    h_src = ad.gather_rows(features, src)
    pair = ad.concat([h_dst, h_src, Tensor(edge_attrs)], axis=1)
    heads_out = []
    attentions = []
    for h in range(params.config.gnn.heads):
        pre = f"gnn.{layer}.h{h}"
        scores = ad.matmul(ad.leaky_relu(ad.matmul(pair, params[f"{pre}.att_w"]), slope), params[f"{pre}.att_a"])
        alpha = ad.segment_softmax(scores, dst, n)
        msg = ad.matmul(h_src, params[f"{pre}.val_w"])
        heads_out.append(ad.scatter_add_rows(ad.scale_rows(msg, alpha), dst, n))
        attentions.append(alpha.values)
    if combine == "concat":
        out = ad.concat(heads_out, axis=1)
    elif combine == "mean":
        acc = heads_out[0]
        for other in heads_out[1:]:
            acc = ad.add(acc, other)
        out = ad.scale(acc, 1.0 / len(heads_out))
    else:
        raise ValueError(f"unknown head combination {combine!r}")
    if return_attention:
        return out, attentions
    return out


def _resolve_features(subgraph: PatientSubgraph, params: ModelParameters) -> Tensor:
    if params.config.feature_mode == "random":
        return ad.gather_rows(params["node_embeddings"], subgraph.local_to_global)
    if subgraph.features is None:
        raise ValueError("subgraph has no node features; attach embeddings or use feature_mode='random'")
    if subgraph.features.shape[1] != params.input_dim:
        raise ValueError(f"feature dim {subgraph.features.shape[1]} != model input dim {params.input_dim}")
    return Tensor(subgraph.features)


def gnn_encode(
    subgraph: PatientSubgraph,
    params: ModelParameters,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Refine node features into d_out-dimensional embeddings."""
    cfg = params.config.gnn
    src, dst, eattr = subgraph.message_arrays()
    h = _resolve_features(subgraph, params)
    for layer in range(cfg.layers - 1):
        h = gatv2_layer(h, src, dst, eattr, params, layer, combine="concat")
        h = ad.layer_norm(h, params[f"gnn.{layer}.ln_gain"], params[f"gnn.{layer}.ln_bias"])
        h = ad.leaky_relu(h, cfg.negative_slope)
        h = ad.dropout(h, cfg.dropout, train, rng)
    h = gatv2_layer(h, src, dst, eattr, params, cfg.layers - 1, combine="mean")
    return ad.linear(h, params["proj.w"], params["proj.b"])


def _multihead_attention(x: Tensor, params: ModelParameters, prefix: str, heads: int) -> Tensor:
    d = x.shape[1]
    head_dim = d // heads
    outs = []
    for h in range(heads):
        q = ad.matmul(x, params[f"{prefix}.h{h}.wq"])
        k = ad.matmul(x, params[f"{prefix}.h{h}.wk"])
        v = ad.matmul(x, params[f"{prefix}.h{h}.wv"])
        logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(head_dim))
        outs.append(ad.matmul(ad.softmax(logits, axis=-1), v))
    return ad.linear(ad.concat(outs, axis=1), params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def encode_patient(
    node_embeddings: Tensor,
    phenotype_mask: np.ndarray,
    params: ModelParameters,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Pool the patient's phenotype embeddings into one d-vector.

    Phenotype rows are MLP-projected, attended jointly with the learnable
    memory slots (single pre-norm residual attention block), mean-pooled over
    the phenotype positions only, and passed through the output MLP.
    """
    mask = np.asarray(phenotype_mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError("patient has no phenotype nodes in the subgraph")
    cfg = params.config.patient
    z = ad.gather_rows(node_embeddings, idx)
    z = ad.relu(ad.linear(z, params["pheno.0.w"], params["pheno.0.b"]))
    z = ad.leaky_relu(ad.linear(z, params["pheno.1.w"], params["pheno.1.b"]))

    if cfg.memory_slots:
        stacked = ad.concat([z, params["memory"]], axis=0)
    else:
        stacked = z
    normed = ad.layer_norm(stacked, params["pmha.ln_gain"], params["pmha.ln_bias"])
    attended = ad.add(stacked, _multihead_attention(normed, params, "pmha", cfg.heads))

    pool_mask = np.zeros(attended.shape[0], dtype=bool)
    pool_mask[: len(idx)] = True
    pooled = ad.masked_mean(attended, pool_mask)
    hidden = ad.leaky_relu(ad.linear(pooled, params["patient.0.w"], params["patient.0.b"]))
    return ad.linear(hidden, params["patient.1.w"], params["patient.1.b"])


def encode_genes(
    node_embeddings: Tensor,
    candidates: np.ndarray,
    params: ModelParameters,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Encode candidate gene rows with a position-free transformer stack.

    Without positional encodings the stack is permutation-equivariant, so the
    ranking cannot depend on candidate order.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0:
        raise ValueError("candidate list must be nonempty")
    cfg = params.config.gene
    x = ad.gather_rows(node_embeddings, candidates)
    for layer in range(cfg.layers):
        pre = f"gene.{layer}"
        normed = ad.layer_norm(x, params[f"{pre}.ln1_gain"], params[f"{pre}.ln1_bias"])
        x = ad.add(x, _multihead_attention(normed, params, pre, cfg.heads))
        normed = ad.layer_norm(x, params[f"{pre}.ln2_gain"], params[f"{pre}.ln2_bias"])
        ff = ad.relu(ad.linear(normed, params[f"{pre}.ff1_w"], params[f"{pre}.ff1_b"]))
        x = ad.add(x, ad.linear(ff, params[f"{pre}.ff2_w"], params[f"{pre}.ff2_b"]))
    return ad.layer_norm(x, params["gene.ln_f_gain"], params["gene.ln_f_bias"])


def forward(
    subgraph: PatientSubgraph,
    params: ModelParameters,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Full pass: node refinement, then patient and gene embeddings."""
    z = gnn_encode(subgraph, params, train=train, rng=rng)
    p = encode_patient(z, subgraph.phenotype_mask, params, train=train, rng=rng)
    genes = encode_genes(z, subgraph.candidate_genes, params, train=train, rng=rng)
    return p, genes
