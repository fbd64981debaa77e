import numpy as np
import pytest

from phenokg import autodiff as ad
from phenokg.kg import KnowledgeGraph, NodeType, graph_from_parts


def finite_diff(func, arrays, h=1e-6):
    """Central-difference gradients of func(arrays) -> float, per input array."""
    grads = []
    for which in range(len(arrays)):
        base = arrays[which]
        grad = np.zeros_like(base, dtype=np.float64)
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = base[idx]
            base[idx] = orig + h
            up = func(arrays)
            base[idx] = orig - h
            down = func(arrays)
            base[idx] = orig
            grad[idx] = (up - down) / (2 * h)
            it.iternext()
        grads.append(grad)
    return grads


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def check_op_grad(build, arrays, tol=1e-5, h=1e-6):
    """Gradcheck: ``build`` maps a list of Tensors to a scalar Tensor."""
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    loss = build(tensors)
    ad.backward(loss)

    def scalar(arrs):
        return float(build([ad.Tensor(a) for a in arrs]).values)

    numeric = finite_diff(scalar, [np.array(a) for a in arrays], h=h)
    for t, num in zip(tensors, numeric):
        got = t.grad if t.grad is not None else np.zeros_like(num)
        assert rel_err(got, num) <= tol, f"gradient mismatch: {got} vs {num}"


def random_graph(rng, n_nodes=30, edge_prob=0.12, gene_frac=0.3, phen_frac=0.3):
    """Random typed graph for traversal oracles; node 'types' span the enum."""
    specs = []
    for i in range(n_nodes):
        r = i / n_nodes
        if r < phen_frac:
            specs.append((f"HP:{i:07d}", NodeType.PHENOTYPE))
        elif r < phen_frac + gene_frac:
            specs.append((f"ENSG{i:011d}", NodeType.GENE_PROTEIN))
        elif r < phen_frac + gene_frac + 0.2:
            specs.append((f"MONDO:{i:07d}", NodeType.DISEASE))
        else:
            specs.append((f"GO:{i:07d}", NodeType.BIOLOGICAL_PROCESS))
    edges = []
    for u in range(n_nodes):
        for v in range(u + 1, n_nodes):
            if rng.random() < edge_prob:
                edges.append((u, v, int(rng.integers(0, 5))))
    return graph_from_parts(specs, edges, edge_dim=15)


def bfs_depths(graph: KnowledgeGraph, seeds):
    """Plain dict-based BFS oracle, independent of the library's traversal."""
    depth = {int(s): 0 for s in seeds}
    frontier = sorted(depth)
    d = 0
    while frontier:
        d += 1
        nxt = []
        for u in frontier:
            for v in graph.neighbors(u):
                v = int(v)
                if v not in depth:
                    depth[v] = d
                    nxt.append(v)
        frontier = nxt
    return depth


@pytest.fixture
def tiny_graph():
    """p0 - d0 - g0 chain plus a second gene g1 two hops from p1."""
    specs = [
        ("HP:0000001", NodeType.PHENOTYPE),
        ("HP:0000002", NodeType.PHENOTYPE),
        ("MONDO:0000001", NodeType.DISEASE),
        ("ENSG00000000001", NodeType.GENE_PROTEIN),
        ("ENSG00000000002", NodeType.GENE_PROTEIN),
        ("GO:0000001", NodeType.BIOLOGICAL_PROCESS),
    ]
    edges = [(0, 2, 0), (2, 3, 1), (1, 5, 2), (5, 4, 3), (3, 4, 4)]
    return graph_from_parts(specs, edges, edge_dim=15)


def small_model_config(out_dim=12, memory_slots=3, gene_layers=1, dropout=0.0, feature_mode="random", d_in=6):
    from phenokg.model import GeneEncoderConfig, GnnConfig, ModelConfig, PatientEncoderConfig

    return ModelConfig(
        gnn=GnnConfig(layers=3, heads=2, hidden_dims=(8, 8), out_dim=out_dim, dropout=dropout, edge_dim=15),
        patient=PatientEncoderConfig(memory_slots=memory_slots, heads=2, pheno_hidden=10, patient_hidden=10),
        gene=GeneEncoderConfig(layers=gene_layers, heads=2, ff_dim=16),
        feature_mode=feature_mode,
        random_feature_dim=d_in,
    )
