"""
Plots and tables from a campaign summary.csv.

  ratios.csv / ratios.png   headline metric ratio per cell; semantic metrics
                            shaded green, geometric ones red
  hiding.csv                per hidden class: class IoU and region depth RMSE,
                            clean vs every hide cell, plus ratios
  dag.csv / dag_<cell>.png  per-class AP, cls loss, reg loss and mean aspect
                            ratio before and after each class-swap cell

CSV outputs depend only on the summary (and campaign.json, when present), so
regenerating from unchanged inputs rewrites identical tables.
"""
import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from evaluation.report import HEADLINE_METRICS, format_value, parse_value  # noqa: E402

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS   = ("cell", "kind", "metric", "before", "after", "ratio")
SEMANTIC_METRICS  = ("map_box", "map_mask", "miou")
GEOMETRIC_METRICS = ("depth_rmse", "depth_abs_rel", "id_l1", "id_abs_rel")
DAG_PANELS        = (
    ("ap_box",       "per-class AP"),
    ("cls_loss",     "classification loss"),
    ("reg_loss",     "regression loss"),
    ("aspect_ratio", "mean aspect ratio"),
)


class ReportInputError(Exception):
    pass


# ── Input ─────────────────────────────────────────────────────────

def read_summary(path: Union[str, Path]) -> List[Dict[str, Optional[object]]]:
    """Rows of a campaign summary with before/after/ratio parsed; an empty file has no rows."""
    path = Path(path)
    if not path.is_file():
        raise ReportInputError(f"summary CSV not found: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            return rows
        missing = [c for c in SUMMARY_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ReportInputError(f"{path}: missing columns {missing}")
        for line, row in enumerate(reader, start=2):
            try:
                rows.append({
                    "cell"  : row["cell"],
                    "kind"  : row["kind"],
                    "metric": row["metric"],
                    "before": parse_value(row["before"]),
                    "after" : parse_value(row["after"]),
                    "ratio" : parse_value(row["ratio"]),
                })
            except (TypeError, ValueError) as e:
                raise ReportInputError(f"{path}, line {line}: {e}") from e
    return rows


def _cells(rows, kind: Optional[str] = None) -> List[str]:
    seen: List[str] = []
    for r in rows:
        if (kind is None or r["kind"] == kind) and r["metric"] != "error" and r["cell"] not in seen:
            seen.append(r["cell"])
    return seen


def _lookup(rows) -> Dict[tuple, dict]:
    return {(r["cell"], r["metric"]): r for r in rows}


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


# ── Metric-ratio bars ─────────────────────────────────────────────

def write_ratio_table(rows, path: Path) -> Path:
    table = _lookup(rows)
    kinds = {r["cell"]: r["kind"] for r in rows}
    body  = []
    for cell in _cells(rows):
        kind = kinds[cell]
        body.append([cell, kind, *(format_value(table[(cell, m)]["ratio"]) if (cell, m) in table else "NA"
                                   for m in HEADLINE_METRICS)])
    return _write_csv(path, ("cell", "kind", *HEADLINE_METRICS), body)


def plot_ratio_bars(rows, path: Path) -> Path:
    table   = _lookup(rows)
    cells   = _cells(rows)
    metrics = list(SEMANTIC_METRICS) + list(GEOMETRIC_METRICS)
    x       = np.arange(len(metrics))
    width   = 0.8 / max(len(cells), 1)

    fig, ax = plt.subplots(figsize=(10, 4.5))
    ax.axvspan(-0.5, len(SEMANTIC_METRICS) - 0.5, color="tab:green", alpha=0.08, label="semantic tasks")
    ax.axvspan(len(SEMANTIC_METRICS) - 0.5, len(metrics) - 0.5, color="tab:red", alpha=0.08, label="geometric tasks")

    top = 1.0
    for i, cell in enumerate(cells):
        values = [table.get((cell, m), {}).get("ratio") for m in metrics]
        heights = [v if v is not None else 0.0 for v in values]
        top = max(top, *heights)
        ax.bar(x - 0.4 + width * (i + 0.5), heights, width, label=cell)

    ax.set_xticks(x)
    ax.set_xticklabels(metrics, rotation=20)
    ax.set_xlim(-0.5, len(metrics) - 0.5)
    ax.set_ylim(0.0, top * 1.05)
    ax.set_ylabel("metric ratio")
    ax.axhline(1.0, color="black", linewidth=0.6, linestyle="--")
    if not cells:
        ax.set_title("no campaign cells")
    ax.legend(fontsize=7, ncol=2, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# ── Hiding table ──────────────────────────────────────────────────

def write_hiding_table(rows, path: Path, hidden: Optional[Dict[str, str]] = None) -> Path:
    """
    One row per (hidden class, hide cell). Without campaign.json the hidden
    class is unknown, so every class with region metrics gets a row.
    """
    table = _lookup(rows)
    body  = []
    for cell in _cells(rows, kind="hide"):
        classes = ([hidden[cell]] if hidden and cell in hidden else
                   sorted({r["metric"].split("/", 1)[1] for r in rows
                           if r["cell"] == cell and r["metric"].startswith(("region_iou/", "region_rmse/"))}))
        for klass in classes:
            line = [klass, cell]
            for metric in (f"region_iou/{klass}", f"region_rmse/{klass}", "miou", "depth_rmse"):
                r = table.get((cell, metric), {})
                line += [format_value(r.get("before")), format_value(r.get("after")), format_value(r.get("ratio"))]
            body.append(line)
    header = ["class", "cell"]
    for name in ("class_iou", "region_rmse", "miou", "depth_rmse"):
        header += [f"{name}_clean", f"{name}_attacked", f"{name}_ratio"]
    return _write_csv(path, header, body)


# ── Class-swap summary ────────────────────────────────────────────

def _dag_classes(rows, cell: str) -> List[str]:
    return sorted({r["metric"].split("/", 1)[1] for r in rows if r["cell"] == cell and r["metric"].startswith("ap_box/")})


def write_dag_table(rows, path: Path) -> Path:
    table = _lookup(rows)
    body  = []
    for cell in _cells(rows, kind="dag"):
        for klass in _dag_classes(rows, cell):
            for breakdown, _ in DAG_PANELS:
                r = table.get((cell, f"{breakdown}/{klass}"), {})
                body.append([cell, klass, breakdown, format_value(r.get("before")), format_value(r.get("after"))])
        flipped = table.get((cell, "extra/flipped_fraction"), {})
        body.append([cell, "", "flipped_fraction", "NA", format_value(flipped.get("after"))])
    return _write_csv(path, ("cell", "class", "metric", "before", "after"), body)


def plot_dag_panels(rows, cell: str, path: Path) -> Path:
    table   = _lookup(rows)
    classes = _dag_classes(rows, cell)
    x       = np.arange(len(classes))

    fig, axes = plt.subplots(1, len(DAG_PANELS), figsize=(14, 3.5))
    for ax, (breakdown, title) in zip(axes, DAG_PANELS):
        before = [table.get((cell, f"{breakdown}/{c}"), {}).get("before") for c in classes]
        after  = [table.get((cell, f"{breakdown}/{c}"), {}).get("after") for c in classes]
        ax.bar(x - 0.2, [v or 0.0 for v in before], 0.4, label="clean")
        ax.bar(x + 0.2, [v or 0.0 for v in after], 0.4, label="swapped")
        if breakdown == "aspect_ratio":
            ax.axhline(1.0, color="black", linewidth=0.6, linestyle="--")
        ax.set_xticks(x)
        ax.set_xticklabels(classes)
        ax.set_title(title, fontsize=9)
    axes[0].legend(fontsize=7)
    fig.suptitle(cell, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# ── Entry ─────────────────────────────────────────────────────────

def build_report(summary: Union[str, Path], out_dir: Union[str, Path],
                 hidden: Optional[Dict[str, str]] = None) -> Dict[str, Path]:
    rows    = read_summary(summary)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = {
        "ratios_csv": write_ratio_table(rows, out_dir / "ratios.csv"),
        "ratios_png": plot_ratio_bars(rows, out_dir / "ratios.png"),
        "hiding_csv": write_hiding_table(rows, out_dir / "hiding.csv", hidden),
        "dag_csv"   : write_dag_table(rows, out_dir / "dag.csv"),
    }
    for cell in _cells(rows, kind="dag"):
        written[f"dag_{cell}"] = plot_dag_panels(rows, cell, out_dir / f"dag_{cell}.png")
    logger.info("[Report] %d cell(s) from %s -> %s", len(_cells(rows)), summary, out_dir)
    return written
