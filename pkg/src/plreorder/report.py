"""Rendering run artifacts: delimited summaries and score figures.

Given a run directory containing ``summary.json`` and per-seed
``trace-<seed>.jsonl`` files, this module writes a flat ``summary.csv``
plus PNG figures: the per-iteration score history of each seed and a bar
chart of final validation scores.  Rendering is non-interactive and never
needs a display.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_summary_csv(summary: dict, path: Path | str) -> None:
    """One row per seed: score, selected ordering, and any error."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["task", "method", "seed", "validation_score", "selected", "error"])
        for row in summary.get("results", []):
            selected = row.get("selected")
            writer.writerow(
                [
                    summary.get("task", ""),
                    summary.get("method", ""),
                    row.get("seed", ""),
                    "" if row.get("validation_score") is None else row["validation_score"],
                    "" if selected is None else " ".join(str(i) for i in selected),
                    row.get("error", ""),
                ]
            )


def read_trace(path: Path | str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def plot_score_history(
    traces: Mapping[int, Sequence[dict]], path: Path | str
) -> bool:
    """Best and mean batch score per iteration, one line pair per seed.

    Returns False (and writes nothing) if no trace has iteration records,
    as happens for baselines.
    """
    series = {}
    for seed, records in sorted(traces.items()):
        iteration_records = [r for r in records if r.get("type") == "iteration"]
        if iteration_records:
            series[seed] = iteration_records
    if not series:
        return False
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    cmap = plt.get_cmap("tab10")
    for slot, (seed, records) in enumerate(series.items()):
        iterations = [r["iteration"] for r in records]
        best = [max(r["scores"]) for r in records]
        mean = [float(np.mean(r["scores"])) for r in records]
        color = cmap(slot % 10)
        ax.plot(iterations, best, color=color, label=f"seed {seed} best")
        ax.plot(iterations, mean, color=color, alpha=0.35, linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("batch score")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("Score history (solid: batch best, faint: batch mean)")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def plot_final_scores(summary: dict, path: Path | str) -> bool:
    """Bar chart of the validation score reached by each seed."""
    rows = [r for r in summary.get("results", []) if r.get("validation_score") is not None]
    if not rows:
        return False
    seeds = [str(r["seed"]) for r in rows]
    scores = [r["validation_score"] for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.bar(seeds, scores, color="#4878d0")
    mean = float(np.mean(scores))
    ax.axhline(mean, color="#d65f5f", linestyle="--", linewidth=1.0, label=f"mean {mean:.3f}")
    ax.set_xlabel("seed")
    ax.set_ylabel("validation score")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(f"{summary.get('method', 'run')} on {summary.get('task', '')}")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def render_report(out_dir: Path | str) -> list[Path]:
    """Re-render the CSV and figures for a finished run directory."""
    out_dir = Path(out_dir)
    summary_path = out_dir / "summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"no summary.json in {out_dir}")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    written: list[Path] = []

    csv_path = out_dir / "summary.csv"
    write_summary_csv(summary, csv_path)
    written.append(csv_path)

    traces = {}
    for trace_path in sorted(out_dir.glob("trace-*.jsonl")):
        seed_text = trace_path.stem.split("-", 1)[1]
        try:
            seed = int(seed_text)
        except ValueError:
            continue
        traces[seed] = read_trace(trace_path)
    history_path = out_dir / "score_history.png"
    if plot_score_history(traces, history_path):
        written.append(history_path)
    final_path = out_dir / "final_scores.png"
    if plot_final_scores(summary, final_path):
        written.append(final_path)
    return written


def plot_distribution(probabilities: Sequence[float], path: Path | str, title: str) -> None:
    """Bar chart of an exact probability table, heaviest permutations first."""
    probs = np.asarray(probabilities, dtype=np.float64)
    order = np.argsort(-probs)
    fig, ax = plt.subplots(figsize=(7.0, 3.6))
    ax.bar(np.arange(probs.size), probs[order], color="#4878d0", width=1.0)
    ax.set_xlabel("permutation (sorted by probability)")
    ax.set_ylabel("probability")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
