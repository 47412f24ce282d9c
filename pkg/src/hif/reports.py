"""Report rendering: JSON documents, delimited tables, and figures.

Every sweep writes three artifacts next to each other: ``<name>.json``
(machine-readable), ``<name>.csv`` (delimited table), and ``<name>.png``
(matplotlib rendering), so results can be consumed by scripts and humans
alike.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_json(path, payload: dict | list):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path, rows: list, columns: list | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return path
    columns = columns or list(rows[0])
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})
    return path


def _new_axes(title: str, xlabel: str, ylabel: str):
    fig, ax = plt.subplots(figsize=(5.4, 3.6), dpi=130)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def hindsight_sweep_figure(rows: list, path):
    """Latency and success against hindsight length, token counts annotated."""
    hs = [r["h"] for r in rows]
    fig, ax = _new_axes("Hindsight length scaling", "hindsight length h", "latency per chunk (ms)")
    ax.plot(hs, [r["latency_ms"] for r in rows], "o-", label="end-to-end latency")
    ax.plot(hs, [r["forward_ms"] for r in rows], "s--", label="network forward")
    for r in rows:
        ax.annotate(f"{r['backbone_tokens']} tok", (r["h"], r["latency_ms"]),
                    textcoords="offset points", xytext=(4, 6), fontsize=7)
    ax2 = ax.twinx()
    ax2.set_ylabel("success rate")
    ax2.set_ylim(0, 1.05)
    ax2.plot(hs, [r["success_rate"] for r in rows], "^:", color="tab:green", label="success")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, fontsize=8, loc="upper left")
    return _save(fig, path)


def mode_sweep_figure(rows: list, path):
    fig, ax = _new_axes("History embedding position", "", "success rate")
    modes = [r["mode"] for r in rows]
    ax.bar(modes, [r["success_rate"] for r in rows], color="tab:blue", width=0.5)
    ax.set_ylim(0, 1.05)
    for i, r in enumerate(rows):
        ax.text(i, r["success_rate"] + 0.02, f"{r['success_rate']:.2f}",
                ha="center", fontsize=9)
    return _save(fig, path)


def loss_curves_figure(curves: dict, path, ylabel: str = "motion L1 loss"):
    fig, ax = _new_axes("Motion-loss convergence", "training step", ylabel)
    for label, points in curves.items():
        steps = [p[0] for p in points]
        vals = [p[1] for p in points]
        # light smoothing for readability
        if len(vals) > 20:
            k = max(1, len(vals) // 100)
            vals = [float(sum(vals[max(0, i - k) : i + 1]) / len(vals[max(0, i - k) : i + 1]))
                    for i in range(len(vals))]
        ax.plot(steps, vals, label=label)
    ax.legend(fontsize=8)
    return _save(fig, path)


def lambda_sweep_figure(rows: list, path):
    fig, ax = _new_axes("Motion-loss weight sweep", "lambda", "success rate")
    ax.semilogx([r["lambda"] for r in rows], [r["success_rate"] for r in rows], "o-")
    ax.set_ylim(0, 1.05)
    return _save(fig, path)


def write_sweep_report(kind: str, rows_or_curves, out_base) -> dict:
    """Emit <out_base>.{json,csv,png} for one sweep; returns paths."""
    out_base = Path(out_base)
    paths = {}
    if kind == "hindsight":
        paths["json"] = write_json(out_base.with_suffix(".json"), rows_or_curves)
        paths["csv"] = write_csv(out_base.with_suffix(".csv"), rows_or_curves)
        paths["png"] = hindsight_sweep_figure(rows_or_curves, out_base.with_suffix(".png"))
    elif kind == "modes":
        paths["json"] = write_json(out_base.with_suffix(".json"), rows_or_curves)
        paths["csv"] = write_csv(out_base.with_suffix(".csv"), rows_or_curves)
        paths["png"] = mode_sweep_figure(rows_or_curves, out_base.with_suffix(".png"))
    elif kind == "joint":
        as_rows = [
            {"objective": name, "step": s, "L_MV": v}
            for name, pts in rows_or_curves.items() for s, v in pts
        ]
        paths["json"] = write_json(out_base.with_suffix(".json"),
                                   {k: [[s, v] for s, v in pts] for k, pts in rows_or_curves.items()})
        paths["csv"] = write_csv(out_base.with_suffix(".csv"), as_rows)
        paths["png"] = loss_curves_figure(rows_or_curves, out_base.with_suffix(".png"))
    elif kind == "lambda":
        paths["json"] = write_json(out_base.with_suffix(".json"), rows_or_curves)
        paths["csv"] = write_csv(out_base.with_suffix(".csv"), rows_or_curves)
        paths["png"] = lambda_sweep_figure(rows_or_curves, out_base.with_suffix(".png"))
    else:
        raise ValueError(f"unknown sweep kind {kind!r}")
    return {k: str(v) for k, v in paths.items()}
