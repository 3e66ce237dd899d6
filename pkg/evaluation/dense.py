"""
Pixel and instance metrics: confusion-matrix mIoU, depth RMSE / abs-rel,
instance median-depth errors, per-class region metrics and box aspect
ratios. Undefined values are None.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from evaluation.detection_ap import pairwise_iou
from scenegen.spec import EVAL_DEPTH_MAX, EVAL_DEPTH_MIN, InstanceAnnotation
from uninet.detections import Detection

REPORT_SCORE_THRESH = 0.3


# ── Segmentation ──────────────────────────────────────────────────

@dataclass
class ConfusionMatrix:
    num_classes : int
    counts      : np.ndarray = None     # gt x pred

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)

    def update(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionMatrix":
        pred, gt = np.asarray(pred).reshape(-1).astype(np.int64), np.asarray(gt).reshape(-1).astype(np.int64)
        if pred.shape != gt.shape:
            raise ValueError(f"prediction has {pred.size} pixels, ground truth {gt.size}")
        keep = (gt >= 0) & (gt < self.num_classes) & (pred >= 0) & (pred < self.num_classes)
        self.counts += np.bincount(gt[keep] * self.num_classes + pred[keep],
                                   minlength=self.num_classes ** 2).reshape(self.num_classes, self.num_classes)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different size")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def iou_per_class(self) -> List[Optional[float]]:
        """IoU per class; None for classes absent from the ground truth."""
        tp    = np.diag(self.counts)
        gt    = self.counts.sum(axis=1)
        union = gt + self.counts.sum(axis=0) - tp
        return [float(tp[c] / union[c]) if gt[c] > 0 else None for c in range(self.num_classes)]

    def miou(self) -> Optional[float]:
        defined = [v for v in self.iou_per_class() if v is not None]
        return float(np.mean(defined)) if defined else None


def miou(pred_seg: np.ndarray, gt_seg: np.ndarray, num_classes: int) -> Optional[float]:
    return ConfusionMatrix(num_classes).update(pred_seg, gt_seg).miou()


# ── Depth ─────────────────────────────────────────────────────────

def depth_valid_mask(gt_depth: np.ndarray) -> np.ndarray:
    gt_depth = np.asarray(gt_depth)
    return np.isfinite(gt_depth) & (gt_depth >= EVAL_DEPTH_MIN) & (gt_depth <= EVAL_DEPTH_MAX)


@dataclass
class DepthAccumulator:
    """Pixel-pooled sums over every valid pixel seen."""
    sq_err  : float = 0.0
    abs_rel : float = 0.0
    count   : int = 0

    def update(self, pred: np.ndarray, gt: np.ndarray, region: Optional[np.ndarray] = None) -> "DepthAccumulator":
        pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
        valid = depth_valid_mask(gt)
        if region is not None:
            valid &= np.asarray(region, dtype=bool)
        diff = pred[valid] - gt[valid]
        self.sq_err  += float(np.sum(diff ** 2))
        self.abs_rel += float(np.sum(np.abs(diff) / gt[valid]))
        self.count   += int(valid.sum())
        return self

    def merge(self, other: "DepthAccumulator") -> "DepthAccumulator":
        return DepthAccumulator(self.sq_err + other.sq_err, self.abs_rel + other.abs_rel, self.count + other.count)

    def rmse(self) -> Optional[float]:
        return float(np.sqrt(self.sq_err / self.count)) if self.count else None

    def mean_abs_rel(self) -> Optional[float]:
        return self.abs_rel / self.count if self.count else None


def depth_metrics(pred_depth: np.ndarray, gt_depth: np.ndarray) -> Tuple[Optional[float], Optional[float]]:
    """(RMSE, abs-rel) over pixels with 1e-3 <= gt <= 80."""
    acc = DepthAccumulator().update(pred_depth, gt_depth)
    return acc.rmse(), acc.mean_abs_rel()


# ── Instance depth ────────────────────────────────────────────────

def match_instance_depths(
    detections   : Sequence[Detection],
    gts          : Sequence[InstanceAnnotation],
    matching_iou : float = 0.5,
) -> List[Tuple[float, float]]:
    """(predicted, ground-truth) median depth pairs; class-agnostic greedy box matching by score."""
    dets = sorted((d for d in detections if d.median_depth is not None), key=lambda d: (-d.score, d.location))
    if not dets or not gts:
        return []
    ious  = pairwise_iou(dets, gts, "box")
    taken = np.zeros(len(gts), dtype=bool)
    pairs = []
    for i, d in enumerate(dets):
        cand = np.where(taken, -1.0, ious[i])
        j    = int(np.argmax(cand))
        if cand[j] >= matching_iou:
            taken[j] = True
            pairs.append((float(d.median_depth), float(gts[j].median_depth)))
    return pairs


def summarize_depth_pairs(pairs: Sequence[Tuple[float, float]]) -> Tuple[Optional[float], Optional[float]]:
    if not pairs:
        return None, None
    p = np.asarray(pairs, dtype=np.float64)
    err = np.abs(p[:, 0] - p[:, 1])
    return float(err.mean()), float((err / p[:, 1]).mean())


def instance_depth_metrics(
    detections   : Sequence[Detection],
    gts          : Sequence[InstanceAnnotation],
    matching_iou : float = 0.5,
) -> Tuple[Optional[float], Optional[float]]:
    """(l1, abs-rel) of median instance depth over matched detections."""
    return summarize_depth_pairs(match_instance_depths(detections, gts, matching_iou))


# ── Per-class region metrics and shape statistics ─────────────────

@dataclass
class RegionAccumulator:
    """Class IoU and depth RMSE over the ground-truth region of one seg class."""
    target_class : int
    inter        : int = 0
    union        : int = 0
    gt_pixels    : int = 0
    depth        : DepthAccumulator = field(default_factory=DepthAccumulator)

    def update(self, pred_seg, pred_depth, gt_seg, gt_depth) -> "RegionAccumulator":
        gt_seg = np.asarray(gt_seg)
        region = gt_seg == self.target_class
        self.gt_pixels += int(region.sum())
        if pred_seg is not None:
            pred = np.asarray(pred_seg) == self.target_class
            self.inter += int((pred & region).sum())
            self.union += int((pred | region).sum())
        if pred_depth is not None and region.any():
            self.depth.update(pred_depth, gt_depth, region)
        return self

    def merge(self, other: "RegionAccumulator") -> "RegionAccumulator":
        return RegionAccumulator(self.target_class, self.inter + other.inter, self.union + other.union,
                                 self.gt_pixels + other.gt_pixels, self.depth.merge(other.depth))

    def iou(self) -> Optional[float]:
        return self.inter / self.union if self.gt_pixels and self.union else None

    def rmse(self) -> Optional[float]:
        return self.depth.rmse() if self.gt_pixels else None


def class_region_metrics(pred_seg, pred_depth, gt_seg, gt_depth, target_class: int) -> Tuple[Optional[float], Optional[float]]:
    """(IoU of target_class, depth RMSE over its ground-truth region); None when the class is absent from gt."""
    acc = RegionAccumulator(target_class).update(pred_seg, pred_depth, gt_seg, gt_depth)
    return acc.iou(), acc.rmse()


def mean_aspect_ratio(detections: Sequence[Detection], class_id: int,
                      min_score: float = REPORT_SCORE_THRESH) -> Optional[float]:
    """Mean width / height of the class's detections scoring at least min_score."""
    ratios = [d.width / d.height for d in detections
              if d.class_id == class_id and d.score >= min_score and d.height > 0]
    return float(np.mean(ratios)) if ratios else None
