"""
Attack campaigns: one clean baseline, then every cell attacks every image of
the split and is scored against that baseline.

Outputs in Campaign.out_dir:
  baseline.csv           clean MetricReport
  cells/<name>.csv       MetricReport of the attacked split
  summary.csv            cell, metric, before, after, ratio (+ error rows for failed cells)
  examples/<name>/...    attack artefacts of the first `save_examples` images
"""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from attacks.config import AttackOutcome
from attacks.dag import dag_swap_attack
from attacks.hiding import hide_class
from attacks.persist import save_outcome
from attacks.pgd import pgd_attack
from evaluation.mlflow_tracker import ExperimentTracker
from evaluation.ratios import direction_of, metric_ratio
from evaluation.report import MetricReport, format_value, write_reports_csv
from observability.prometheus_metrics import metrics
from orchestration.evaluator import EvalAccumulator, TrainedModel, evaluate_model, load_trained, new_accumulator
from orchestration.state import Campaign, CampaignCell, CellFailedError
from scenegen.dataset import load_manifest, load_sample
from scenegen.spec import Sample

logger = logging.getLogger(__name__)

SUMMARY_FIELDS = ("cell", "kind", "metric", "before", "after", "ratio")


@dataclass
class CellResult:
    cell   : CampaignCell
    report : Optional[MetricReport] = None
    ratios : Dict[str, Optional[float]] = field(default_factory=dict)
    error  : Optional[str] = None


@dataclass
class CampaignResult:
    baseline : MetricReport
    cells    : List[CellResult] = field(default_factory=list)
    summary  : Optional[Path] = None

    def cell(self, name: str) -> CellResult:
        for c in self.cells:
            if c.cell.name == name:
                return c
        raise KeyError(name)


def ratio_table(before: MetricReport, after: MetricReport) -> Dict[str, Optional[float]]:
    """Metric ratio of every metric of `after` that has a direction."""
    b = before.flat()
    out = {}
    for name, value in after.flat().items():
        direction = direction_of(name)
        if direction is not None:
            out[name] = metric_ratio(b.get(name), value, direction)
    return out


def _attack_fn(cell: CampaignCell, trained: TrainedModel, spec) -> Callable[[Sample], AttackOutcome]:
    model = trained.model
    if cell.kind == "pgd":
        return lambda s: pgd_attack(model, s, cell.attack, basis=trained.basis, class_weights=trained.class_weights)
    if cell.kind == "dag":
        c1, c2 = (spec.thing_id(n) for n in cell.swap)
        return lambda s: dag_swap_attack(model, s, c1, c2, max_iters=cell.dag_max_iters, gamma=cell.dag_gamma / 255.0,
                                         include_segmentation=cell.include_segmentation, epsilon=cell.dag_epsilon)
    thing = spec.thing_id(cell.hide_class)
    return lambda s: hide_class(model, s, thing, head=cell.head, epsilon=cell.attack.epsilon,
                                step=cell.attack.step, iterations=cell.attack.iterations)


def _run_shard(
    cell     : CampaignCell,
    attack   : Callable[[Sample], AttackOutcome],
    template : EvalAccumulator,
    manifest,
    ids      : List[str],
    examples : Optional[Path],
    keep     : int,
) -> tuple:
    acc = template.fresh()
    flips, targets = [], 0
    for sid in ids:
        sample  = load_sample(manifest, sid)
        outcome = attack(sample)
        acc.add(sample, outcome.adv_outputs)
        if outcome.flipped_fraction is not None:
            flips.append(outcome.flipped_fraction)
        targets += outcome.target_count
        if examples is not None and sid in manifest.sample_ids[:keep]:
            save_outcome(outcome, examples, sid)
    return acc, flips, targets


def run_cell(cell: CampaignCell, trained: TrainedModel, manifest, ids: List[str], baseline: MetricReport,
             jobs: int = 1, examples: Optional[Path] = None, keep: int = 0) -> CellResult:
    spec     = manifest.spec
    attack   = _attack_fn(cell, trained, spec)
    template = new_accumulator(trained.model, spec, trained.basis, diagnostics=cell.kind == "dag")
    shards   = [ids[i::jobs] for i in range(jobs)] if jobs > 1 else [ids]

    if len(shards) == 1:
        parts = [_run_shard(cell, attack, template, manifest, shards[0], examples, keep)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda sh: _run_shard(cell, attack, template, manifest, sh, examples, keep), shards))

    acc, flips, targets = parts[0]
    for other, f, t in parts[1:]:
        acc = acc.merge(other)
        flips += f
        targets += t

    extra: Dict[str, Optional[float]] = {}
    if cell.kind == "dag":
        extra["flipped_fraction"] = float(np.mean(flips)) if flips else None
        extra["target_count"]     = float(targets)
    report = acc.report(label=cell.name, extra=extra)
    return CellResult(cell=cell, report=report, ratios=ratio_table(baseline, report))


def write_summary(path: Path, baseline: MetricReport, cells: List[CellResult]) -> Path:
    before = baseline.flat()
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        for res in cells:
            if res.report is None:
                writer.writerow({"cell": res.cell.name, "kind": res.cell.kind, "metric": "error",
                                 "before": "NA", "after": "NA", "ratio": "NA"})
                continue
            for name, value in res.report.flat().items():
                writer.writerow({
                    "cell"  : res.cell.name,
                    "kind"  : res.cell.kind,
                    "metric": name,
                    "before": format_value(before.get(name)),
                    "after" : format_value(value),
                    "ratio" : format_value(res.ratios.get(name)),
                })
    return path


def run_campaign(campaign: Campaign, progress: bool = True, tracker: Optional[ExperimentTracker] = None) -> CampaignResult:
    tracker  = tracker or ExperimentTracker()
    out_dir  = Path(campaign.out_dir)
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)
    campaign.save(out_dir / "campaign.json")

    trained  = load_trained(campaign.checkpoint)
    manifest = load_manifest(campaign.manifest)
    ids      = manifest.sample_ids[: campaign.limit] if campaign.limit is not None else list(manifest.sample_ids)

    tracker.start_run(f"campaign-{out_dir.name}", {"checkpoint": campaign.checkpoint, "cells": len(campaign.cells),
                                                   "samples": len(ids)})
    logger.info("[Campaign] %d cell(s) on %d sample(s) of %s", len(campaign.cells), len(ids), manifest.root)
    baseline = evaluate_model(trained.model, manifest, trained.basis, label="clean", sample_ids=ids,
                              diagnostics=any(c.kind == "dag" for c in campaign.cells), progress=progress)
    write_reports_csv([baseline], out_dir / "baseline.csv")
    tracker.log_metrics(baseline.headline(), prefix="clean_")

    results: List[CellResult] = []
    for cell in campaign.cells:
        metrics.cell_started()
        examples = out_dir / "examples" / cell.name if campaign.save_examples else None
        try:
            res = run_cell(cell, trained, manifest, ids, baseline, jobs=campaign.jobs,
                           examples=examples, keep=campaign.save_examples)
            write_reports_csv([res.report], out_dir / "cells" / f"{cell.name}.csv")
            tracker.log_metrics(res.report.headline(), prefix=f"{cell.name}_")
            metrics.cell_finished(cell.kind)
            logger.info("[Campaign] %s: %s", cell.name, ", ".join(
                f"{k}={v:.3f}" for k, v in res.ratios.items() if v is not None and "/" not in k))
        except Exception as e:
            metrics.cell_finished(cell.kind, failed=True)
            logger.warning("[Campaign] cell %r failed: %s: %s", cell.name, type(e).__name__, e)
            res = CellResult(cell=cell, error=str(CellFailedError(f"{cell.name}: {e}")))
        results.append(res)

    summary = write_summary(out_dir / "summary.csv", baseline, results)
    tracker.log_artifact(summary)
    tracker.end_run()
    return CampaignResult(baseline=baseline, cells=results, summary=summary)
