"""Evaluation reports: JSONL records, summary tables, and rendered figures."""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_jsonl(records, stream):
    for rec in records:
        stream.write(json.dumps(rec) + "\n")


def read_jsonl(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: bad JSON on line {ln}: {exc}") from exc
    return records


def summarize_by_object(records):
    """Per-object recall rows from evaluated records.

    Each record carries obj_id, vsd (float or None) and correct (bool).
    Rows: (obj_id, n_targets, n_detected, n_correct, recall, mean_vsd).
    """
    by_obj = {}
    for rec in records:
        by_obj.setdefault(rec["obj_id"], []).append(rec)
    rows = []
    for obj_id in sorted(by_obj):
        group = by_obj[obj_id]
        detected = [r for r in group if r.get("vsd") is not None]
        correct = sum(1 for r in group if r.get("correct"))
        mean_vsd = (sum(r["vsd"] for r in detected) / len(detected)) if detected else None
        rows.append({
            "obj_id": obj_id,
            "n_targets": len(group),
            "n_detected": len(detected),
            "n_correct": correct,
            "recall": correct / len(group),
            "mean_vsd": mean_vsd,
        })
    return rows


def format_summary_text(rows):
    lines = [f"{'object':<16} {'targets':>7} {'detected':>8} {'correct':>7} "
             f"{'recall':>7} {'mean vsd':>9}"]
    for r in rows:
        mv = f"{r['mean_vsd']:.3f}" if r["mean_vsd"] is not None else "-"
        lines.append(f"{r['obj_id']:<16} {r['n_targets']:>7} {r['n_detected']:>8} "
                     f"{r['n_correct']:>7} {r['recall']:>7.3f} {mv:>9}")
    if rows:
        total = sum(r["n_targets"] for r in rows)
        correct = sum(r["n_correct"] for r in rows)
        lines.append(f"{'average':<16} {total:>7} "
                     f"{sum(r['n_detected'] for r in rows):>8} {correct:>7} "
                     f"{correct / total:>7.3f} {'':>9}")
    return "\n".join(lines)


def write_summary_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["obj_id", "n_targets", "n_detected", "n_correct",
                         "recall", "mean_vsd"])
        for r in rows:
            writer.writerow([r["obj_id"], r["n_targets"], r["n_detected"],
                             r["n_correct"], f"{r['recall']:.6f}",
                             "" if r["mean_vsd"] is None else f"{r['mean_vsd']:.6f}"])


def recall_figure(rows, path):
    """Bar chart of per-object recall with the overall average drawn across."""
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(rows) + 2.0), 3.2))
    names = [r["obj_id"] for r in rows]
    recalls = [r["recall"] for r in rows]
    ax.bar(range(len(rows)), recalls, color="#4878a8")
    if rows:
        total = sum(r["n_targets"] for r in rows)
        avg = sum(r["n_correct"] for r in rows) / total
        ax.axhline(avg, color="#a84848", linestyle="--", linewidth=1.2,
                   label=f"average {avg:.2f}")
        ax.legend(loc="lower right", fontsize=8)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("recall")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def vsd_histogram_figure(errors, threshold, path):
    """Distribution of VSD errors with the correctness threshold marked."""
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    vals = [e for e in errors if e is not None]
    if vals:
        ax.hist(vals, bins=np.linspace(0, 1, 21), color="#4878a8", edgecolor="white")
    ax.axvline(threshold, color="#a84848", linestyle="--", linewidth=1.2,
               label=f"t = {threshold:g}")
    ax.set_xlabel("visible surface discrepancy")
    ax.set_ylabel("targets")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def timings_figure(timing_rows, path):
    """Stacked per-scene stage timings (ms)."""
    stages = ["preprocess", "match", "cluster", "verify"]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(timing_rows) + 2.0), 3.2))
    bottom = np.zeros(len(timing_rows))
    for stage in stages:
        vals = np.array([row["timings_ms"].get(stage, 0.0) for row in timing_rows])
        ax.bar(range(len(timing_rows)), vals, bottom=bottom, label=stage)
        bottom += vals
    ax.set_xticks(range(len(timing_rows)))
    ax.set_xticklabels([row["scene_id"] for row in timing_rows],
                       rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("ms")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_timings_csv(timing_rows, path):
    stages = ["preprocess", "match", "cluster", "verify", "total"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene_id"] + stages)
        for row in timing_rows:
            writer.writerow([row["scene_id"]]
                            + [f"{row['timings_ms'].get(s, 0.0):.1f}" for s in stages])
