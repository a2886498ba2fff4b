"""Rendering: aligned text tables, training-curve plots, sweep heatmaps."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import ReportError
from .metrics import MetricsReport
from .training import TrainResult

_METRIC_LABELS = [
    ("asr", "ASR"),
    ("ca", "CA"),
    ("ba", "BA"),
    ("c_rej", "C-REJ"),
    ("psr", "PSR"),
    ("b_rej", "B-REJ"),
    ("dsr", "DSR"),
]


def render_metrics_table(metrics: dict[str, MetricsReport]) -> str:
    """One row per evaluation mode, one column per available metric."""
    columns = [(name, label) for name, label in _METRIC_LABELS
               if any(getattr(rep, name) is not None for rep in metrics.values())]
    header = ["mode"] + [label for _, label in columns]
    rows = [header]
    for mode, rep in metrics.items():
        row = [mode]
        for name, _ in columns:
            value = getattr(rep, name)
            row.append("-" if value is None else f"{value:.2f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_summary(metrics: dict[str, MetricsReport], diagnostics: dict) -> str:
    parts = [render_metrics_table(metrics)]
    if diagnostics:
        parts.append("")
        for key in sorted(diagnostics):
            value = diagnostics[key]
            if isinstance(value, float):
                value = f"{value:.4f}"
            parts.append(f"{key}: {value}")
        parts.append("")
    return "\n".join(parts)


def write_run_plots(run_dir: Path, result: TrainResult) -> list[Path]:
    plots_dir = Path(run_dir) / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    written = []
    epochs = [rec.epoch for rec in result.epochs]

    if any(rec.asr is not None for rec in result.epochs):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, [rec.asr for rec in result.epochs], label="ASR", marker="o", ms=3)
        ax.plot(epochs, [rec.ca for rec in result.epochs], label="CA", marker="s", ms=3)
        ax.set_xlabel("epoch")
        ax.set_ylabel("percent")
        ax.set_ylim(-2, 102)
        ax.legend()
        ax.grid(alpha=0.3)
        path = plots_dir / "asr_ca_vs_epoch.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    groups = sorted({g for rec in result.epochs for g in rec.loss_by_group})
    if groups:
        fig, ax = plt.subplots(figsize=(6, 4))
        for group in groups:
            ax.plot(epochs, [rec.loss_by_group.get(group) for rec in result.epochs],
                    label=group, marker="o", ms=3)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean training loss")
        ax.legend()
        ax.grid(alpha=0.3)
        path = plots_dir / "loss_by_group_vs_epoch.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def _plot_trace_csv(run_dir: Path, trace_path: Path) -> list[Path]:
    with open(trace_path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return []
    plots_dir = run_dir / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    written = []
    epochs = [int(float(r["epoch"])) for r in rows]

    def series(key: str):
        values = [r.get(key) for r in rows]
        if any(v in (None, "") for v in values):
            return None
        return [float(v) for v in values]

    asr, ca = series("asr"), series("ca")
    if asr and ca:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, asr, label="ASR", marker="o", ms=3)
        ax.plot(epochs, ca, label="CA", marker="s", ms=3)
        ax.set_xlabel("epoch")
        ax.set_ylabel("percent")
        ax.set_ylim(-2, 102)
        ax.legend()
        ax.grid(alpha=0.3)
        path = plots_dir / "asr_ca_vs_epoch.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    loss_keys = [k for k in rows[0] if k.startswith("loss_")]
    if loss_keys:
        fig, ax = plt.subplots(figsize=(6, 4))
        for key in sorted(loss_keys):
            values = series(key)
            if values:
                ax.plot(epochs, values, label=key.removeprefix("loss_"), marker="o", ms=3)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean training loss")
        ax.legend()
        ax.grid(alpha=0.3)
        path = plots_dir / "loss_by_group_vs_epoch.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def _plot_sweep_matrices(run_dir: Path) -> list[Path]:
    written = []
    plots_dir = run_dir / "plots"
    for matrix_path in sorted(run_dir.glob("*.csv")):
        if matrix_path.name == "cells.csv":
            continue
        with open(matrix_path, newline="") as f:
            rows = list(csv.reader(f))
        if len(rows) < 2:
            continue
        corner = rows[0][0]
        col_labels = rows[0][1:]
        row_labels = [r[0] for r in rows[1:]]
        values = [[float(v) if v else float("nan") for v in r[1:]] for r in rows[1:]]
        plots_dir.mkdir(parents=True, exist_ok=True)
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(values, cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(col_labels)), col_labels)
        ax.set_yticks(range(len(row_labels)), row_labels)
        axis_names = corner.split("\\")
        if len(axis_names) == 2:
            ax.set_ylabel(axis_names[0])
            ax.set_xlabel(axis_names[1])
        for i, row in enumerate(values):
            for j, v in enumerate(row):
                if v == v:  # skip NaN
                    ax.text(j, i, f"{v:.1f}", ha="center", va="center", fontsize=8, color="white")
        ax.set_title(matrix_path.stem.upper())
        fig.colorbar(im)
        path = plots_dir / f"{matrix_path.stem}_heatmap.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def report(run_dir: str | Path) -> dict[str, list[Path]]:
    """Render tables and plots for a finished run or sweep directory."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ReportError(f"run directory does not exist: {run_dir}")
    outputs: dict[str, list[Path]] = {"tables": [], "plots": []}
    metrics_path = run_dir / "metrics.json"
    cells_path = run_dir / "cells.csv"
    if metrics_path.exists():
        payload = json.loads(metrics_path.read_text())
        metrics = {mode: MetricsReport.from_json_dict(d) for mode, d in payload["modes"].items()}
        table_path = run_dir / "table.txt"
        table_path.write_text(render_summary(metrics, payload.get("diagnostics", {})))
        outputs["tables"].append(table_path)
        trace_path = run_dir / "trace.csv"
        if trace_path.exists():
            outputs["plots"].extend(_plot_trace_csv(run_dir, trace_path))
    elif cells_path.exists():
        outputs["plots"].extend(_plot_sweep_matrices(run_dir))
        outputs["tables"].append(cells_path)
    else:
        raise ReportError(
            f"no reportable artifacts in {run_dir}: expected metrics.json or cells.csv"
        )
    return outputs
