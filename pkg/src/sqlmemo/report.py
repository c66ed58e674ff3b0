"""Turn a run log back into the EX table and a few diagnostic figures.

Everything here re-derives from the log alone, so a finished (or half
finished) run can be re-rendered without touching providers or databases.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import read_run_log, summarize
from .pipeline import DIFFICULTIES

TABLE_NAME = "ex_table.csv"


def split_records(records):
    item_records = [r for r in records if r.get("type") == "item"]
    branch_records = [r for r in records if r.get("type") == "branch"]
    return item_records, branch_records


def stats_from_items(item_records) -> dict:
    verdicts = [{"difficulty": r["difficulty"], "verdict": r["verdict"]} for r in item_records]
    return summarize(verdicts)


def write_ex_table(item_records, out_path) -> dict:
    stats = stats_from_items(item_records)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["difficulty", "count", "correct", "ex"])
        for diff in DIFFICULTIES:
            bucket = stats["by_difficulty"][diff]
            writer.writerow([diff, bucket["count"], bucket["correct"], f"{bucket['ex']:.2f}"])
        total = stats["total"]
        writer.writerow(["total", total["count"], total["correct"], f"{total['ex']:.2f}"])
    return stats


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def render_figures(item_records, out_dir: Path) -> list:
    """EX bars, the cumulative accuracy curve, and vote agreement sizes."""
    stats = stats_from_items(item_records)
    paths = []

    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    labels = list(DIFFICULTIES) + ["total"]
    values = [stats["by_difficulty"][d]["ex"] for d in DIFFICULTIES] + [stats["total"]["ex"]]
    ax.bar(labels, values, color=["#4878a8"] * len(DIFFICULTIES) + ["#c46436"])
    ax.set_ylabel("EX (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Execution accuracy by difficulty")
    for x, v in enumerate(values):
        ax.text(x, v + 1.5, f"{v:.2f}", ha="center", fontsize=8)
    paths.append(_save(fig, out_dir / "ex_by_difficulty.png"))

    running = []
    correct_so_far = 0
    for i, rec in enumerate(item_records, start=1):
        correct_so_far += int(bool(rec["verdict"]))
        running.append(100.0 * correct_so_far / i)
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(range(1, len(running) + 1), running, marker="o", markersize=3)
    ax.set_xlabel("items processed")
    ax.set_ylabel("cumulative EX (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Accuracy as the notebooks grow")
    paths.append(_save(fig, out_dir / "learning_curve.png"))

    top_sizes = [r["vote_group_sizes"][0] if r.get("vote_group_sizes") else 0
                 for r in item_records]
    size_range = list(range(0, max(top_sizes, default=0) + 1))
    counts = [sum(1 for s in top_sizes if s == n) for n in size_range]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.bar([str(n) for n in size_range], counts, color="#4878a8")
    ax.set_xlabel("largest agreement group")
    ax.set_ylabel("items")
    ax.set_title("Vote agreement across branches")
    paths.append(_save(fig, out_dir / "vote_groups.png"))

    return paths


def render(run_log_path, out_dir, figures: bool = True) -> dict:
    """Write the delimited EX table (and figures) next to each other in out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    item_records, branch_records = split_records(read_run_log(run_log_path))
    stats = write_ex_table(item_records, out_dir / TABLE_NAME)
    figure_paths = render_figures(item_records, out_dir) if figures else []
    return {
        "stats": stats,
        "table": out_dir / TABLE_NAME,
        "figures": figure_paths,
        "items": len(item_records),
        "branch_records": len(branch_records),
    }
