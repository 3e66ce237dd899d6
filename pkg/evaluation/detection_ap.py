"""
COCO-style average precision for boxes and masks.

Per class and IoU threshold (0.50:0.05:0.95): detections of all images are
ranked by score, each greedily matched to the best still-unmatched ground
truth of the same image and class; precision is made monotone and sampled
at 101 recall points. mAP is the mean over classes that have ground truth
and over thresholds.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
import torch
from torchvision.ops import box_iou

from scenegen.spec import InstanceAnnotation
from uninet.detections import Detection

Kind = Literal["box", "mask"]

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS       = np.linspace(0.0, 1.0, 101)


def _box_ious(dets: Sequence[Detection], gts: Sequence[InstanceAnnotation]) -> np.ndarray:
    if not dets or not gts:
        return np.zeros((len(dets), len(gts)))
    a = torch.tensor([d.box for d in dets], dtype=torch.float64)
    b = torch.tensor([g.box for g in gts], dtype=torch.float64)
    return np.nan_to_num(box_iou(a, b).numpy())


def _mask_ious(dets: Sequence[Detection], gts: Sequence[InstanceAnnotation]) -> np.ndarray:
    out = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        if d.mask is None:
            continue
        for j, g in enumerate(gts):
            union = np.logical_or(d.mask, g.mask).sum()
            if union:
                out[i, j] = np.logical_and(d.mask, g.mask).sum() / union
    return out


def pairwise_iou(dets: Sequence[Detection], gts: Sequence[InstanceAnnotation], kind: Kind = "box") -> np.ndarray:
    return _box_ious(dets, gts) if kind == "box" else _mask_ious(dets, gts)


def interpolated_ap(scores: np.ndarray, matched: np.ndarray, num_gt: int) -> float:
    """101-point interpolated AP of one ranked list; matched is the TP flag per detection."""
    if num_gt == 0:
        raise ValueError("AP is undefined without ground truth")
    if scores.size == 0:
        return 0.0
    order     = np.argsort(-scores, kind="stable")
    tp        = np.cumsum(matched[order])
    fp        = np.cumsum(~matched[order])
    recall    = tp / num_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx       = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled   = np.where(idx < recall.size, precision[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


@dataclass
class APAccumulator:
    """Mergeable per-class ranked lists; add() one image at a time."""
    num_classes    : int
    kind           : Kind = "box"
    iou_thresholds : Sequence[float] = COCO_IOU_THRESHOLDS
    scores         : Dict[int, List[float]] = field(default_factory=dict)
    matches        : Dict[int, List[List[bool]]] = field(default_factory=dict)   # per threshold
    num_gt         : Dict[int, int] = field(default_factory=dict)

    def add(self, detections: Sequence[Detection], gts: Sequence[InstanceAnnotation]) -> None:
        for c in range(self.num_classes):
            dets = sorted((d for d in detections if d.class_id == c), key=lambda d: (-d.score, d.location))
            gc   = [g for g in gts if g.class_id == c]
            self.num_gt[c] = self.num_gt.get(c, 0) + len(gc)
            if not dets:
                continue
            ious = pairwise_iou(dets, gc, self.kind)
            flags = self.matches.setdefault(c, [[] for _ in self.iou_thresholds])
            for t, thr in enumerate(self.iou_thresholds):
                taken = np.zeros(len(gc), dtype=bool)
                for i in range(len(dets)):
                    cand = np.where(taken, -1.0, ious[i]) if gc else np.array([])
                    j = int(np.argmax(cand)) if cand.size else -1
                    hit = j >= 0 and cand[j] >= thr
                    if hit:
                        taken[j] = True
                    flags[t].append(bool(hit))
            self.scores.setdefault(c, []).extend(d.score for d in dets)

    def merge(self, other: "APAccumulator") -> "APAccumulator":
        if (other.num_classes, other.kind, tuple(other.iou_thresholds)) != \
           (self.num_classes, self.kind, tuple(self.iou_thresholds)):
            raise ValueError("cannot merge AP accumulators with different settings")
        merged = APAccumulator(self.num_classes, self.kind, self.iou_thresholds)
        for acc in (self, other):
            for c, n in acc.num_gt.items():
                merged.num_gt[c] = merged.num_gt.get(c, 0) + n
            for c, s in acc.scores.items():
                merged.scores.setdefault(c, []).extend(s)
                flags = merged.matches.setdefault(c, [[] for _ in self.iou_thresholds])
                for t, f in enumerate(acc.matches[c]):
                    flags[t].extend(f)
        return merged

    def per_class(self) -> Dict[int, Optional[float]]:
        out: Dict[int, Optional[float]] = {}
        for c in range(self.num_classes):
            n = self.num_gt.get(c, 0)
            if n == 0:
                out[c] = None
                continue
            scores = np.asarray(self.scores.get(c, []), dtype=np.float64)
            aps = []
            for t in range(len(self.iou_thresholds)):
                flags = np.asarray(self.matches[c][t], dtype=bool) if c in self.matches else np.zeros(0, dtype=bool)
                aps.append(interpolated_ap(scores, flags, n))
            out[c] = float(np.mean(aps))
        return out

    def value(self) -> Optional[float]:
        defined = [v for v in self.per_class().values() if v is not None]
        return float(np.mean(defined)) if defined else None


def average_precision(
    preds          : Sequence[Sequence[Detection]],
    gts            : Sequence[Sequence[InstanceAnnotation]],
    num_classes    : int,
    kind           : Kind = "box",
    iou_thresholds : Sequence[float] = COCO_IOU_THRESHOLDS,
) -> Optional[float]:
    """mAP over images given per-image detections and ground truth; None when no class has ground truth."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction lists for {len(gts)} ground-truth lists")
    acc = APAccumulator(num_classes, kind, iou_thresholds)
    for d, g in zip(preds, gts):
        acc.add(d, g)
    return acc.value()
