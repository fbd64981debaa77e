"""Report rendering: JSON + TSV tables with matplotlib figures alongside."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluate import EvaluationReport  # noqa: E402


def write_evaluation_outputs(report: EvaluationReport, out_dir) -> dict[str, Path]:
    """Write report.json, ranks.tsv, and the top-q match curve figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out_dir / "report.json",
        "ranks": out_dir / "ranks.tsv",
        "match_curve": out_dir / "match_curve.png",
    }
    paths["report"].write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    with open(paths["ranks"], "w", encoding="utf-8") as fh:
        fh.write("id\trank\texcluded\treciprocal_rank\n")
        for p in report.patients:
            fh.write(f"{p.id}\t{'' if p.rank is None else p.rank}\t{int(p.excluded)}\t{p.reciprocal_rank:.6f}\n")

    qs = sorted(report.top_q)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(qs)), [100.0 * report.top_q[q] for q in qs], marker="o")
    ax.set_xticks(range(len(qs)), [str(q) for q in qs])
    ax.set_xlabel("top-q")
    ax.set_ylabel("match percentage (%)")
    ax.set_title(f"Same-gene neighbor match ({report.n_evaluated} evaluated, {report.n_excluded} excluded)")
    ax.set_ylim(0, 100)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(paths["match_curve"], dpi=120)
    plt.close(fig)
    return paths


def write_training_outputs(report, out_dir) -> dict[str, Path]:
    """Write report.json, history.tsv, and the loss / val-MRR / lr curves."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out_dir / "report.json",
        "history": out_dir / "history.tsv",
        "curves": out_dir / "training_curves.png",
    }
    paths["report"].write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    with open(paths["history"], "w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\tval_mrr\tlr\n")
        for epoch, (loss, mrr, lr) in enumerate(zip(report.losses, report.val_mrr, report.lrs)):
            fh.write(f"{epoch}\t{loss:.6f}\t{mrr:.6f}\t{lr:.8g}\n")

    epochs = list(range(len(report.losses)))
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    axes[0].plot(epochs, report.losses)
    axes[0].set_title("training loss")
    axes[1].plot(epochs, report.val_mrr)
    axes[1].set_title("validation MRR")
    if report.best_epoch >= 0:
        axes[1].axvline(report.best_epoch, color="gray", linestyle=":", alpha=0.7)
    axes[2].plot(epochs, report.lrs)
    axes[2].set_title("learning rate")
    for ax in axes:
        ax.set_xlabel("epoch")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(paths["curves"], dpi=120)
    plt.close(fig)
    return paths
