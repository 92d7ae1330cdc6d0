"""Report rendering: canonical JSON, delimited summaries, and figures.

Every report-producing command writes a JSON report, a CSV twin of the
tabular part, and a PNG figure next to them. JSON is emitted with sorted
keys and fixed separators so identical runs are byte-identical.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .ablation import AblationReport
from .scoring import EvalReport


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def write_eval_csv(path: str | Path, report: EvalReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "n", "correct", "accuracy"])
        for vid in sorted(report.per_video):
            stats = report.per_video[vid]
            acc = stats["correct"] / stats["n"] if stats["n"] else 0.0
            writer.writerow([vid, stats["n"], stats["correct"], f"{acc:.6f}"])
        writer.writerow(["__overall__", report.n, round(report.accuracy * report.n), f"{report.accuracy:.6f}"])


def plot_eval_accuracy(path: str | Path, report: EvalReport, max_videos: int = 30) -> None:
    videos = sorted(report.per_video)[:max_videos]
    accs = [
        report.per_video[v]["correct"] / report.per_video[v]["n"] if report.per_video[v]["n"] else 0.0
        for v in videos
    ]
    fig, ax = plt.subplots(figsize=(max(6, 0.3 * len(videos) + 2), 4))
    ax.bar(range(len(videos)), accs, color="#4878cf")
    ax.axhline(report.accuracy, color="#d65f5f", linestyle="--", label=f"overall {report.accuracy:.3f}")
    ax.set_xticks(range(len(videos)))
    ax.set_xticklabels(videos, rotation=90, fontsize=6)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.set_title(f"per-video accuracy (n={report.n})")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_ablation_csv(path: str | Path, report: AblationReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "accuracy", "delta"])
        writer.writerow(["base", report.acc_base, ""])
        writer.writerow(["defaced", report.acc_defaced, report.delta_defaced])
        writer.writerow(["blank", report.acc_blank, report.delta_blank])
        writer.writerow(["gibberish", report.acc_gibberish, report.delta_gibberish])


def plot_ablation(path: str | Path, report: AblationReport) -> None:
    labels = ["base", "defaced", "blank", "gibberish"]
    values = [report.acc_base, report.acc_defaced, report.acc_blank, report.acc_gibberish]
    pairs = [(lab, val) for lab, val in zip(labels, values) if val is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([p[0] for p in pairs], [p[1] for p in pairs],
           color=["#4878cf", "#b8b8b8", "#b8b8b8", "#b8b8b8"][: len(pairs)])
    for i, (lab, val) in enumerate(pairs):
        ax.text(i, val, f"{val:.3g}", ha="center", va="bottom", fontsize=9)
    ax.set_ylabel(f"accuracy ({report.units})")
    ax.set_title("accuracy under modality perturbations")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_loss_csv(path: str | Path, history: list[tuple[int, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in history:
            writer.writerow([step, repr(loss)])


def plot_loss_curve(path: str | Path, history: list[tuple[int, float]]) -> None:
    steps = [s for s, _ in history]
    losses = [l for _, l in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, color="#4878cf", linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("batch loss")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
