"""
Dense training targets for the instance head and the pixel heads.

Point-anchor assignment follows FCOS with one level per instance: the level
is the regression range holding max(l, t, r, b) measured from the box centre,
and every location of that level strictly inside the box is positive for the
instance. A location inside several eligible boxes goes to the smallest box
(then to the lower instance index).

Targets are stored flat over locations in the same order as
DenseOutputs.flatten() (P3 row-major, then P4, then P5), so loss functions
index outputs and targets with the same positive mask.
"""
import logging
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np
import torch

from maskcodec import PCABasis, encode_mask
from observability.prometheus_metrics import metrics
from scenegen.spec import EVAL_DEPTH_MAX, EVAL_DEPTH_MIN, Sample
from uninet.config import INSTANCE_LEVELS, ModelConfig, stride_of
from uninet.outputs import anchor_points, level_shapes

logger = logging.getLogger(__name__)


@dataclass
class DenseTargets:
    labels       : torch.Tensor                   # N x L long, thing class id or -1
    instance_ids : torch.Tensor                   # N x L long, index into sample.instances or -1
    box_targets  : torch.Tensor                   # N x L x 4 ground-truth boxes (x0, y0, x1, y1)
    centerness   : torch.Tensor                   # N x L, in (0, 1] at positives, 0 elsewhere
    median_depth : torch.Tensor                   # N x L, meters at positives
    points       : torch.Tensor                   # L x 2
    strides      : torch.Tensor                   # L
    seg_gt       : torch.Tensor                   # N x H x W long
    depth_gt     : torch.Tensor                   # N x 1 x H x W
    depth_valid  : torch.Tensor                   # N x 1 x H x W bool
    mask_codes   : Optional[torch.Tensor] = None  # N x L x k
    dropped      : int = 0

    @property
    def positive(self) -> torch.Tensor:
        return self.labels >= 0

    @property
    def num_positive(self) -> int:
        return int(self.positive.sum())


def depth_validity(depth_gt: torch.Tensor) -> torch.Tensor:
    """Pixels usable for depth losses and metrics: 1e-3 <= gt <= 80."""
    return (depth_gt >= EVAL_DEPTH_MIN) & (depth_gt <= EVAL_DEPTH_MAX)


def location_grid(image_height: int, image_width: int):
    """(points L x 2, strides L) for P3..P5 in flattened order."""
    pts, strides = [], []
    for _, stride, h, w in level_shapes(image_height, image_width):
        p = anchor_points(h, w, stride, dtype=torch.float64)
        pts.append(p)
        strides.append(torch.full((h * w,), float(stride), dtype=torch.float64))
    return torch.cat(pts), torch.cat(strides)


def location_levels(strides: np.ndarray) -> np.ndarray:
    """Index into INSTANCE_LEVELS of every flattened location."""
    out = np.full(strides.shape, -1, dtype=np.int64)
    for i, level in enumerate(INSTANCE_LEVELS):
        out[strides == stride_of(level)] = i
    return out


def instance_levels(boxes: np.ndarray, config: ModelConfig) -> np.ndarray:
    """One level per box: the range holding max(l, t, r, b) seen from the box centre (half the longer side)."""
    reach = np.maximum(boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1]) / 2.0
    out   = np.zeros(len(boxes), dtype=np.int64)
    for i, (lo, hi) in enumerate(config.level_ranges):
        out[(reach > lo) & (reach <= hi)] = i
    return out


def assign_targets(sample: Sample, config: ModelConfig, basis: Optional[PCABasis] = None) -> DenseTargets:
    H, W = sample.seg_gt.shape
    points_t, strides_t = location_grid(H, W)
    points, strides     = points_t.numpy(), strides_t.numpy()
    L, n                = points.shape[0], len(sample.instances)

    labels       = np.full(L, -1, dtype=np.int64)
    instance_ids = np.full(L, -1, dtype=np.int64)
    box_targets  = np.zeros((L, 4), dtype=np.float64)
    centerness   = np.zeros(L, dtype=np.float64)
    median_depth = np.zeros(L, dtype=np.float64)
    mask_codes   = np.zeros((L, basis.k), dtype=np.float64) if basis is not None else None
    dropped      = 0

    if n:
        boxes = np.array([inst.box for inst in sample.instances], dtype=np.float64)   # n x 4
        px, py = points[:, 0:1], points[:, 1:2]                                       # L x 1
        l = px - boxes[None, :, 0]
        t = py - boxes[None, :, 1]
        r = boxes[None, :, 2] - px
        b = boxes[None, :, 3] - py
        dists  = np.stack([l, t, r, b], axis=-1)                                      # L x n x 4
        inside = dists.min(axis=-1) > 0
        ok     = inside & (location_levels(strides)[:, None] == instance_levels(boxes, config)[None, :])

        areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
        cost  = np.where(ok, areas[None, :], np.inf)
        owner = np.argmin(cost, axis=1)                 # first minimum = lower instance index
        pos   = np.isfinite(cost[np.arange(L), owner])

        idx = np.nonzero(pos)[0]
        g   = owner[idx]
        instance_ids[idx] = g
        labels[idx]       = np.array([sample.instances[j].class_id for j in g], dtype=np.int64)
        box_targets[idx]  = boxes[g]
        d = dists[idx, g]
        centerness[idx]   = np.sqrt(
            (np.minimum(d[:, 0], d[:, 2]) / np.maximum(d[:, 0], d[:, 2]))
            * (np.minimum(d[:, 1], d[:, 3]) / np.maximum(d[:, 1], d[:, 3]))
        )
        median_depth[idx] = np.array([sample.instances[j].median_depth for j in g])

        if mask_codes is not None:
            codes = {j: encode_mask(sample.instances[j].mask, sample.instances[j].box, basis) for j in np.unique(g)}
            for loc, j in zip(idx, g):
                mask_codes[loc] = codes[j]

        dropped = n - len(np.unique(g))
        if dropped:
            logger.warning("[Targets] %s: %d instance(s) have no location inside their box on their level",
                           sample.sample_id or "<sample>", dropped)
            metrics.record_dropped_instances(dropped)

    depth_gt = torch.from_numpy(np.asarray(sample.depth_gt, dtype=np.float32))[None, None]
    return DenseTargets(
        labels       = torch.from_numpy(labels)[None],
        instance_ids = torch.from_numpy(instance_ids)[None],
        box_targets  = torch.from_numpy(box_targets).float()[None],
        centerness   = torch.from_numpy(centerness).float()[None],
        median_depth = torch.from_numpy(median_depth).float()[None],
        points       = points_t.float(),
        strides      = strides_t.float(),
        seg_gt       = torch.from_numpy(sample.seg_gt.astype(np.int64))[None],
        depth_gt     = depth_gt,
        depth_valid  = depth_validity(depth_gt),
        mask_codes   = torch.from_numpy(mask_codes).float()[None] if mask_codes is not None else None,
        dropped      = dropped,
    )


_SHARED = {"points", "strides", "dropped"}


def collate_targets(items: Sequence[DenseTargets]) -> DenseTargets:
    """Concatenate per-sample targets (all from images of one size) along the batch axis."""
    if not items:
        raise ValueError("cannot collate an empty list of targets")
    merged = {}
    for f in fields(DenseTargets):
        if f.name in _SHARED:
            continue
        values = [getattr(t, f.name) for t in items]
        merged[f.name] = None if any(v is None for v in values) else torch.cat(values, dim=0)
    return DenseTargets(
        points  = items[0].points,
        strides = items[0].strides,
        dropped = sum(t.dropped for t in items),
        **merged,
    )


def to_device(targets: DenseTargets, device, dtype: torch.dtype = torch.float32) -> DenseTargets:
    moved = {}
    for f in fields(DenseTargets):
        v = getattr(targets, f.name)
        if isinstance(v, torch.Tensor):
            v = v.to(device=device, dtype=dtype) if v.is_floating_point() else v.to(device)
        moved[f.name] = v
    return DenseTargets(**moved)
