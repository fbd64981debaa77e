"""Command-line entry points for every pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error (bad files, unknown ids,
incompatible checkpoints).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import DataError
from .kg import KnowledgeGraph, attach_embeddings, load_graph, save_graph_files
from .patients import SimulatorConfig, load_patients, save_patients, simulate_cohort, synthetic_graph

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit 2; this CLI reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_graph_dir(graph_dir, edge_dim: int = 15) -> KnowledgeGraph:
    graph_dir = Path(graph_dir)
    graph = load_graph(graph_dir / "nodes.tsv", graph_dir / "edges.tsv", edge_dim=edge_dim)
    return attach_embeddings(graph, graph_dir / "embeddings.bin")


def _split_csv(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [part.strip() for part in text.split(",") if part.strip()]


def _cmd_build_graph(args) -> int:
    if args.synthetic is not None:
        total = args.synthetic
        graph = synthetic_graph(
            n_phenotypes=int(total * 0.45),
            n_genes=int(total * 0.2),
            n_diseases=int(total * 0.2),
            n_other=total - int(total * 0.45) - 2 * int(total * 0.2),
            seed=args.seed,
            edge_dim=args.edge_dim,
        )
    else:
        if not (args.nodes and args.edges):
            raise DataError("build-graph needs --nodes and --edges (or --synthetic N)")
        graph = load_graph(args.nodes, args.edges, edge_dim=args.edge_dim)
        if args.embeddings:
            graph = attach_embeddings(graph, args.embeddings)
    counts = {}
    for node in graph.nodes:
        counts[node.node_type.value] = counts.get(node.node_type.value, 0) + 1
    print(f"nodes\t{graph.n_nodes}")
    print(f"edges\t{graph.n_edges}")
    print(f"relation_kinds\t{len(set(graph.edge_rel.tolist()))}")
    for name in sorted(counts):
        print(f"type.{name}\t{counts[name]}")
    if graph.embeddings is not None:
        print(f"embedding_dim\t{graph.embeddings.shape[1]}")
    if args.out:
        save_graph_files(graph, args.out)
        print(f"written\t{args.out}")
    return 0


def _cmd_simulate(args) -> int:
    graph = _load_graph_dir(args.graph)
    config = SimulatorConfig(
        n_patients=args.n,
        phenotypes_mean=args.pheno_mean,
        phenotypes_sd=args.pheno_sd,
        noise_phenotypes=args.noise,
        distractor_candidates=args.distractors,
        seed=args.seed,
    )
    records = simulate_cohort(graph, config)
    save_patients(records, args.out)
    print(f"patients\t{len(records)}")
    print(f"written\t{args.out}")
    return 0


def _model_config_from_args(args):
    from .model import GeneEncoderConfig, GnnConfig, ModelConfig, PatientEncoderConfig

    if args.model_config:
        obj = json.loads(Path(args.model_config).read_text(encoding="utf-8"))
        return ModelConfig(
            gnn=GnnConfig(**obj.get("gnn", {})),
            patient=PatientEncoderConfig(**obj.get("patient", {})),
            gene=GeneEncoderConfig(**obj.get("gene", {})),
            tau_init=obj.get("tau_init", 0.12),
            feature_mode=obj.get("feature_mode", "pretrained"),
            random_feature_dim=obj.get("random_feature_dim", 512),
        )
    return ModelConfig()


def _cmd_train(args) -> int:
    from .losses import GeneLossConfig, SimLossConfig
    from .train import TrainConfig, resume, train

    mode = args.mode.replace("-", "_")
    graph = _load_graph_dir(args.graph, edge_dim=args.edge_dim)
    train_patients = load_patients(args.train, graph)
    val_patients = load_patients(args.val, graph) if args.val else []
    if args.resume:
        report = resume(args.resume, graph, train_patients, val_patients, args.out, max_epochs=args.epochs)
    else:
        train_config = TrainConfig(
            max_epochs=args.epochs if args.epochs is not None else 135,
            patience=args.patience,
            batch_size=args.batch_size,
            lr=args.lr,
            t0=args.t0,
            t_mult=args.t_mult,
            weight_decay=args.weight_decay,
            use_gene_loss=args.loss_arm in ("gene", "both"),
            use_sim_loss=args.loss_arm in ("sim", "both"),
            embedding_mode=mode,
            k=args.k,
            seed=args.seed,
        )
        report = train(
            graph, train_patients, val_patients, args.out,
            model_config=_model_config_from_args(args), train_config=train_config,
        )
    print(f"best_epoch\t{report.best_epoch}")
    print(f"best_val_mrr\t{report.best_mrr:.6f}")
    print(f"checkpoint\t{report.checkpoint_path}")
    return 0


def _cmd_evaluate(args) -> int:
    from .evaluate import evaluate
    from .reports import write_evaluation_outputs
    from .train import load_model

    params, header = load_model(args.ckpt)
    graph = _load_graph_dir(args.graph, edge_dim=params.config.gnn.edge_dim)
    patients = load_patients(args.patients, graph)
    report = evaluate(
        graph, patients, params,
        mode=args.mode, k=args.k,
        own_phenotypes_only=header.get("embedding_mode") == "phenotypes_only",
    )
    paths = write_evaluation_outputs(report, args.out)
    print(f"mrr\t{report.mrr:.6f}")
    print(f"evaluated\t{report.n_evaluated}")
    print(f"excluded\t{report.n_excluded}")
    print(f"report\t{paths['report']}")
    return 0


def _cmd_rank(args) -> int:
    from .service import ServiceContext, serve_rank
    from .train import load_model

    params, header = load_model(args.ckpt)
    graph = _load_graph_dir(args.graph, edge_dim=params.config.gnn.edge_dim)
    ctx = ServiceContext(
        graph=graph, params=params,
        own_phenotypes_only=header.get("embedding_mode") == "phenotypes_only",
    )
    payload = {"phenotypes": _split_csv(args.phenotypes), "k": args.k}
    if args.candidates:
        payload["candidate_genes"] = _split_csv(args.candidates)
    if args.top:
        payload["top"] = args.top
    status, body = serve_rank(ctx, payload)
    if status != 200:
        raise DataError(body.get("error", "ranking failed"))
    if body["excluded"]:
        print("no reachable candidate genes")
        return 0
    print("rank\tgene\tscore")
    for position, entry in enumerate(body["ranking"], start=1):
        print(f"{position}\t{entry['gene']}\t{entry['score']:.6f}")
    return 0


def _cmd_serve(args) -> int:
    from .service import ServiceContext, make_server, resolve_addr
    from .train import load_model

    params, header = load_model(args.ckpt)
    graph = _load_graph_dir(args.graph, edge_dim=params.config.gnn.edge_dim)
    ctx = ServiceContext(
        graph=graph, params=params,
        own_phenotypes_only=header.get("embedding_mode") == "phenotypes_only",
    )
    server = make_server(ctx, resolve_addr(args.addr))
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:  # pragma: no cover - interactive shutdown
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phenokg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-graph", help="validate knowledge-graph files or generate a synthetic graph")
    p.add_argument("--nodes", help="nodes.tsv path")
    p.add_argument("--edges", help="edges.tsv path")
    p.add_argument("--embeddings", help="embeddings.bin path")
    p.add_argument("--synthetic", type=int, metavar="N", help="generate a synthetic graph with ~N nodes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--edge-dim", type=int, default=15)
    p.add_argument("--out", help="directory to write normalized graph files")
    p.set_defaults(func=_cmd_build_graph)

    p = sub.add_parser("simulate", help="write a synthetic patient cohort as patients.jsonl")
    p.add_argument("--graph", required=True, help="graph directory (nodes.tsv, edges.tsv)")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--distractors", type=int, default=19)
    p.add_argument("--noise", type=int, default=0)
    p.add_argument("--pheno-mean", type=float, default=7.9)
    p.add_argument("--pheno-sd", type=float, default=6.6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="train a model and write checkpoints plus report.json")
    p.add_argument("--graph", required=True)
    p.add_argument("--train", required=True, help="training patients.jsonl")
    p.add_argument("--val", help="validation patients.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="continue from a training-state checkpoint")
    p.add_argument("--epochs", type=int, help="epoch budget (default 135; extends the budget when resuming)")
    p.add_argument("--patience", type=int, default=25)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--t0", type=int, default=10)
    p.add_argument("--t-mult", type=int, default=2)
    p.add_argument("--loss-arm", choices=["gene", "sim", "both"], default="both")
    p.add_argument("--mode", choices=["pretrained", "random", "phenotypes-only"], default="pretrained")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--edge-dim", type=int, default=15)
    p.add_argument("--model-config", help="JSON file overriding model dimensions")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a labeled cohort and write report.json + figures")
    p.add_argument("--graph", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--patients", required=True)
    p.add_argument("--mode", choices=["candidates", "khop"], default="candidates")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("rank", help="rank candidate genes for one patient")
    p.add_argument("--graph", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--phenotypes", required=True, help="comma-separated phenotype ids")
    p.add_argument("--candidates", help="comma-separated candidate gene ids")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--top", type=int)
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("serve", help="start the HTTP ranking service")
    p.add_argument("--graph", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--addr", help="host:port (overrides $PHENOKG_ADDR)")
    p.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
