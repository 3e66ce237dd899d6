"""
Evaluation of a model over a split.

EvalAccumulator consumes (sample, DenseOutputs) pairs, so the same code
scores clean forward passes and attacked ones, and shards of a split can be
accumulated independently and merged.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from evaluation.dense import (REPORT_SCORE_THRESH, ConfusionMatrix, DepthAccumulator, RegionAccumulator,
                              match_instance_depths, summarize_depth_pairs)
from evaluation.detection_ap import APAccumulator
from evaluation.report import MetricReport
from losses.targets import assign_targets
from losses.task_losses import loss_cls, loss_reg
from maskcodec import PCABasis
from scenegen.dataset import DatasetManifest, load_manifest, load_sample
from scenegen.spec import Sample, SceneSpec
from uninet.checkpoint import load_checkpoint
from uninet.config import Task, format_tasks, validate_task_mask
from uninet.detections import decode_detections
from uninet.network import UniNet
from uninet.outputs import DenseOutputs

logger = logging.getLogger(__name__)


@dataclass
class TrainedModel:
    model         : UniNet
    extra         : Dict
    basis         : Optional[PCABasis]
    class_weights : Optional[torch.Tensor]
    path          : Path


def load_trained(checkpoint: Union[str, Path]) -> TrainedModel:
    """Checkpoint plus its mask basis and segmentation class weights."""
    path = Path(checkpoint)
    model, extra = load_checkpoint(path)
    basis = PCABasis.load(path.parent / extra["basis"]) if extra.get("basis") else None
    weights = extra.get("class_weights")
    return TrainedModel(
        model         = model,
        extra         = extra,
        basis         = basis,
        class_weights = torch.tensor(weights, dtype=torch.float32) if weights is not None else None,
        path          = path,
    )


@dataclass
class EvalAccumulator:
    tasks        : frozenset
    spec         : SceneSpec
    basis        : Optional[PCABasis] = None
    diagnostics  : bool = False
    score_thresh : float = 0.05
    model_config : Optional[object] = None
    num_samples  : int = 0
    ap_box       : Optional[APAccumulator] = None
    ap_mask      : Optional[APAccumulator] = None
    confusion    : Optional[ConfusionMatrix] = None
    depth        : DepthAccumulator = field(default_factory=DepthAccumulator)
    id_pairs     : List[Tuple[float, float]] = field(default_factory=list)
    aspects      : Dict[int, List[float]] = field(default_factory=dict)
    regions      : Dict[int, RegionAccumulator] = field(default_factory=dict)
    class_losses : Dict[str, Dict[int, List[float]]] = field(default_factory=dict)

    def __post_init__(self):
        T = self.spec.num_things
        if Task.OD in self.tasks and self.ap_box is None:
            self.ap_box = APAccumulator(T, "box")
        if Task.IS in self.tasks and self.ap_mask is None:
            self.ap_mask = APAccumulator(T, "mask")
        if Task.SS in self.tasks and self.confusion is None:
            self.confusion = ConfusionMatrix(self.spec.num_classes)
        if self.tasks & {Task.SS, Task.D} and not self.regions:
            self.regions = {t: RegionAccumulator(self.spec.seg_class_of_thing(t)) for t in range(T)}

    def fresh(self) -> "EvalAccumulator":
        return EvalAccumulator(self.tasks, self.spec, self.basis, self.diagnostics, self.score_thresh, self.model_config)

    # ── Accumulation ─────────────────────────────────────────────

    def add(self, sample: Sample, outputs: DenseOutputs) -> "EvalAccumulator":
        self.num_samples += 1
        if Task.OD in self.tasks:
            dets = decode_detections(outputs, self.basis if Task.IS in self.tasks else None,
                                     score_thresh=self.score_thresh)
            self.ap_box.add(dets, sample.instances)
            if self.ap_mask is not None:
                self.ap_mask.add(dets, sample.instances)
            if Task.ID in self.tasks:
                self.id_pairs.extend(match_instance_depths(dets, sample.instances))
            for d in dets:
                if d.score >= REPORT_SCORE_THRESH and d.height > 0:
                    self.aspects.setdefault(d.class_id, []).append(d.width / d.height)
            if self.diagnostics:
                self._add_class_losses(sample, outputs)

        pred_seg = pred_depth = None
        if Task.SS in self.tasks:
            pred_seg = outputs.seg_logits[0].argmax(dim=0).cpu().numpy()
            self.confusion.update(pred_seg, sample.seg_gt)
        if Task.D in self.tasks:
            pred_depth = outputs.depth_map[0, 0].detach().cpu().numpy()
            self.depth.update(pred_depth, sample.depth_gt)
        for region in self.regions.values():
            region.update(pred_seg, pred_depth, sample.seg_gt, sample.depth_gt)
        return self

    @torch.no_grad()
    def _add_class_losses(self, sample: Sample, outputs: DenseOutputs) -> None:
        targets = assign_targets(sample, self.model_config, None)
        flat    = outputs.flatten()
        for c in range(self.spec.num_things):
            if not bool((targets.labels == c).any()):
                continue
            self.class_losses.setdefault("cls_loss", {}).setdefault(c, []).append(
                float(loss_cls(flat.cls_logits.float(), targets, class_id=c)))
            self.class_losses.setdefault("reg_loss", {}).setdefault(c, []).append(
                float(loss_reg(flat.box_dists.float(), targets, class_id=c)))

    def merge(self, other: "EvalAccumulator") -> "EvalAccumulator":
        out = self.fresh()
        out.num_samples = self.num_samples + other.num_samples
        if self.ap_box is not None:
            out.ap_box = self.ap_box.merge(other.ap_box)
        if self.ap_mask is not None:
            out.ap_mask = self.ap_mask.merge(other.ap_mask)
        if self.confusion is not None:
            out.confusion = self.confusion.merge(other.confusion)
        out.depth    = self.depth.merge(other.depth)
        out.id_pairs = self.id_pairs + other.id_pairs
        for src in (self.aspects, other.aspects):
            for c, v in src.items():
                out.aspects.setdefault(c, []).extend(v)
        out.regions = {t: self.regions[t].merge(other.regions[t]) for t in self.regions}
        for src in (self.class_losses, other.class_losses):
            for name, per in src.items():
                for c, v in per.items():
                    out.class_losses.setdefault(name, {}).setdefault(c, []).extend(v)
        return out

    # ── Report ───────────────────────────────────────────────────

    def report(self, label: str = "clean", extra: Optional[Dict[str, Optional[float]]] = None) -> MetricReport:
        things = [t.name for t in self.spec.thing_classes]
        per_class: Dict[str, Dict[str, Optional[float]]] = {}
        values: Dict[str, Optional[float]] = {}

        if self.ap_box is not None:
            values["map_box"] = self.ap_box.value()
            per_class["ap_box"] = {things[c]: v for c, v in self.ap_box.per_class().items()}
            per_class["aspect_ratio"] = {
                things[c]: (float(np.mean(self.aspects[c])) if self.aspects.get(c) else None)
                for c in range(len(things))
            }
        if self.ap_mask is not None:
            values["map_mask"] = self.ap_mask.value()
            per_class["ap_mask"] = {things[c]: v for c, v in self.ap_mask.per_class().items()}
        if self.confusion is not None:
            values["miou"] = self.confusion.miou()
            per_class["iou"] = dict(zip(self.spec.class_names, self.confusion.iou_per_class()))
        if Task.D in self.tasks:
            values["depth_rmse"]    = self.depth.rmse()
            values["depth_abs_rel"] = self.depth.mean_abs_rel()
        if Task.ID in self.tasks:
            values["id_l1"], values["id_abs_rel"] = summarize_depth_pairs(self.id_pairs)
        if self.regions:
            if Task.SS in self.tasks:
                per_class["region_iou"] = {things[t]: r.iou() for t, r in self.regions.items()}
            if Task.D in self.tasks:
                per_class["region_rmse"] = {things[t]: r.rmse() for t, r in self.regions.items()}
        for name, per in self.class_losses.items():
            per_class[name] = {things[c]: (float(np.mean(per[c])) if per.get(c) else None)
                               for c in range(len(things))}

        return MetricReport(label=label, num_samples=self.num_samples, per_class=per_class,
                            extra=dict(extra or {}), **values)


def new_accumulator(model: UniNet, spec: SceneSpec, basis: Optional[PCABasis] = None,
                    diagnostics: bool = False, tasks: Optional[Iterable] = None) -> EvalAccumulator:
    return EvalAccumulator(tasks=model.tasks if tasks is None else frozenset(tasks), spec=spec, basis=basis, diagnostics=diagnostics,
                           model_config=model.config)


def evaluate_model(
    model       : UniNet,
    manifest    : DatasetManifest,
    basis       : Optional[PCABasis] = None,
    label       : str = "clean",
    sample_ids  : Optional[Sequence[str]] = None,
    diagnostics : bool = False,
    progress    : bool = True,
    tasks       : Optional[Iterable] = None,
) -> MetricReport:
    """
    Forward every sample of the split and score the requested tasks (default:
    every task the model was built for). Requested tasks the model has no head
    for are reported as absent metrics.
    """
    wanted = model.tasks if tasks is None else validate_task_mask(tasks)
    mask   = frozenset(wanted & model.tasks)
    if wanted - mask:
        logger.warning("[Evaluator] model has no head for %s; those metrics stay empty", format_tasks(wanted - mask))
    acc = new_accumulator(model, manifest.spec, basis, diagnostics, mask)
    ids = list(sample_ids) if sample_ids is not None else list(manifest.sample_ids)
    model.eval()
    with torch.no_grad():
        for sid in tqdm(ids, desc=f"eval {label}", leave=False, disable=not progress):
            sample = load_sample(manifest, sid)
            image  = torch.from_numpy(np.ascontiguousarray(sample.image)).permute(2, 0, 1)[None].float()
            outputs = model(image, task_mask=mask) if mask else DenseOutputs(image_size=tuple(image.shape[-2:]))
            acc.add(sample, outputs)
    report = acc.report(label)
    logger.info("[Evaluator] %s: %s", label, ", ".join(
        f"{k}={v:.4f}" for k, v in report.headline().items() if v is not None))
    return report


def evaluate(checkpoint: Union[str, Path], manifest: Union[str, Path], label: str = "clean",
             limit: Optional[int] = None, progress: bool = True, tasks: Optional[Iterable] = None) -> MetricReport:
    trained = load_trained(checkpoint)
    split   = load_manifest(manifest)
    ids     = split.sample_ids[:limit] if limit is not None else split.sample_ids
    return evaluate_model(trained.model, split, trained.basis, label=label, sample_ids=ids, progress=progress,
                          tasks=tasks)
