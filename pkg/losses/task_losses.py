"""
The seven task losses.

Each function reads only the target fields of its own task; PGD over a
loss group relies on this to never touch the targets of other tasks.
Instance losses are computed over the flattened location axis.
"""
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torchvision.ops import generalized_box_iou_loss

from losses.targets import DenseTargets

VFL_ALPHA = 0.75
VFL_GAMMA = 2.0


def _zero(like: torch.Tensor) -> torch.Tensor:
    # keeps the graph connected when a loss has no support
    return like.sum() * 0.0


def _positive(targets: DenseTargets, class_id: Optional[int] = None) -> torch.Tensor:
    return targets.labels >= 0 if class_id is None else targets.labels == class_id


# ── Instance losses ───────────────────────────────────────────────

def loss_cls(cls_logits: torch.Tensor, targets: DenseTargets,
             alpha: float = VFL_ALPHA, gamma: float = VFL_GAMMA,
             class_id: Optional[int] = None) -> torch.Tensor:
    """
    Varifocal loss. cls_logits: N x L x T.

    Positives carry an IoU-aware target q (the centerness target) on their
    class channel; every other entry is a negative weighted by alpha * p^gamma.
    With class_id set, only locations whose ground truth is that class count.
    """
    labels = targets.labels
    pos    = labels >= 0
    q      = torch.zeros_like(cls_logits)
    if pos.any():
        n_idx, l_idx = torch.nonzero(pos, as_tuple=True)
        q[n_idx, l_idx, labels[n_idx, l_idx]] = targets.centerness[n_idx, l_idx].to(q.dtype)
    is_pos = (q > 0).to(cls_logits.dtype)
    p      = torch.sigmoid(cls_logits)
    weight = alpha * p.pow(gamma) * (1.0 - is_pos) + q * is_pos
    per    = F.binary_cross_entropy_with_logits(cls_logits, q, reduction="none") * weight

    if class_id is not None:
        keep = _positive(targets, class_id)
        if not keep.any():
            return _zero(cls_logits)
        return per[keep].sum() / keep.sum()
    return per.sum() / max(int(pos.sum()), 1)


def loss_reg(box_dists: torch.Tensor, targets: DenseTargets, class_id: Optional[int] = None) -> torch.Tensor:
    """Mean 1 - GIoU over positives. box_dists: N x L x 4 (l, t, r, b)."""
    pos = _positive(targets, class_id)
    if not pos.any():
        return _zero(box_dists)
    pts   = targets.points.to(box_dists.dtype)
    px    = pts[:, 0].expand(box_dists.shape[:2])
    py    = pts[:, 1].expand(box_dists.shape[:2])
    l, t, r, b = box_dists.unbind(-1)
    pred  = torch.stack([px - l, py - t, px + r, py + b], dim=-1)
    return generalized_box_iou_loss(pred[pos], targets.box_targets[pos].to(box_dists.dtype), reduction="mean")


def loss_cent(centerness_logits: torch.Tensor, targets: DenseTargets) -> torch.Tensor:
    """BCE of centerness logits (N x L) against centerness targets, mean over positives."""
    pos = targets.labels >= 0
    if not pos.any():
        return _zero(centerness_logits)
    return F.binary_cross_entropy_with_logits(
        centerness_logits[pos], targets.centerness[pos].to(centerness_logits.dtype), reduction="mean"
    )


def loss_is(mask_codes: torch.Tensor, targets: DenseTargets) -> torch.Tensor:
    """MSE between predicted and encoded ground-truth mask codes (N x L x k), averaged over positives."""
    pos = targets.labels >= 0
    if not pos.any():
        return _zero(mask_codes)
    if targets.mask_codes is None:
        raise ValueError("instance-segmentation targets need a mask-codec basis")
    return F.mse_loss(mask_codes[pos], targets.mask_codes[pos].to(mask_codes.dtype), reduction="mean")


def loss_id(inst_depth: torch.Tensor, targets: DenseTargets) -> torch.Tensor:
    """L1 between predicted and ground-truth median instance depth (N x L), mean over positives."""
    pos = targets.labels >= 0
    if not pos.any():
        return _zero(inst_depth)
    return F.l1_loss(inst_depth[pos], targets.median_depth[pos].to(inst_depth.dtype), reduction="mean")


# ── Pixel losses ──────────────────────────────────────────────────

def seg_class_weights(frequencies) -> torch.Tensor:
    """w_c proportional to 1 / ln(1.02 + f_c), renormalised to mean 1."""
    f = torch.as_tensor(np.asarray(frequencies, dtype=np.float64)).clamp(min=0.0)
    w = 1.0 / torch.log(1.02 + f)
    return (w / w.mean()).float()


def loss_seg(seg_logits: torch.Tensor, seg_gt: torch.Tensor,
             class_weights: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Class-balanced per-pixel cross entropy. seg_logits: N x C x H x W, seg_gt: N x H x W."""
    weight = class_weights.to(seg_logits.dtype).to(seg_logits.device) if class_weights is not None else None
    return F.cross_entropy(seg_logits, seg_gt.long(), weight=weight, reduction="mean")


def loss_depth(depth_map: torch.Tensor, depth_gt: torch.Tensor, valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    """RMSE over valid pixels."""
    if valid is None:
        valid = torch.ones_like(depth_gt, dtype=torch.bool)
    if not valid.any():
        return _zero(depth_map)
    diff = depth_map[valid] - depth_gt[valid].to(depth_map.dtype)
    mse  = diff.pow(2).mean()
    live = mse > 0
    # sqrt only where it is differentiable; a perfect fit is an exact 0
    return torch.where(live, torch.where(live, mse, torch.ones_like(mse)).sqrt(), mse)
