import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch
from torchvision.ops import box_iou

from maskcodec import PCABasis, decode_mask, paste_mask
from uninet.outputs import DenseOutputs


@dataclass
class Detection:
    class_id     : int
    score        : float
    box          : Tuple[float, float, float, float]
    mask         : Optional[np.ndarray] = None     # bool, H x W
    median_depth : Optional[float] = None
    location     : int = -1                        # flat point-anchor index, used for tie-breaking

    @property
    def width(self) -> float:
        return self.box[2] - self.box[0]

    @property
    def height(self) -> float:
        return self.box[3] - self.box[1]

    @property
    def aspect_ratio(self) -> float:
        return self.width / self.height if self.height > 0 else float("inf")


def greedy_nms(boxes: torch.Tensor, scores: torch.Tensor, locations: torch.Tensor, iou_thresh: float) -> List[int]:
    """Keep indices in descending score order; equal scores go to the lower location index."""
    order = np.lexsort((locations.cpu().numpy(), -scores.cpu().numpy()))
    if order.size == 0:
        return []
    ious = box_iou(boxes[order], boxes[order]).cpu().numpy()
    suppressed = np.zeros(order.size, dtype=bool)
    keep = []
    for i in range(order.size):
        if suppressed[i]:
            continue
        keep.append(int(order[i]))
        suppressed |= ious[i] > iou_thresh
    return keep


def _integer_box(box: Tuple[float, float, float, float], height: int, width: int) -> Tuple[int, int, int, int]:
    x0 = int(min(max(math.floor(box[0]), 0), width - 1))
    y0 = int(min(max(math.floor(box[1]), 0), height - 1))
    x1 = int(min(max(math.ceil(box[2]), x0 + 1), width))
    y1 = int(min(max(math.ceil(box[3]), y0 + 1), height))
    return x0, y0, x1, y1


@torch.no_grad()
def decode_detections(
    dense       : DenseOutputs,
    basis       : Optional[PCABasis] = None,
    score_thresh: float = 0.05,
    nms_iou     : float = 0.6,
    max_dets    : int   = 100,
    batch_index : int   = 0,
) -> List[Detection]:
    """FCOS-style decoding of one image of a batch into scored, NMS-filtered detections."""
    flat   = dense.flatten()
    H, W   = dense.image_size
    probs  = torch.sigmoid(flat.cls_logits[batch_index].float())
    cent   = torch.sigmoid(flat.centerness[batch_index].float())
    scores = torch.sqrt(probs * cent[:, None])                     # L x T
    boxes  = flat.boxes()[batch_index].float()
    boxes  = torch.stack([
        boxes[:, 0].clamp(0, W), boxes[:, 1].clamp(0, H),
        boxes[:, 2].clamp(0, W), boxes[:, 3].clamp(0, H),
    ], dim=-1)

    loc_idx, cls_idx = torch.nonzero(scores >= score_thresh, as_tuple=True)
    if loc_idx.numel() == 0:
        return []
    cand_scores = scores[loc_idx, cls_idx]
    cand_boxes  = boxes[loc_idx]

    kept: List[int] = []
    for c in torch.unique(cls_idx).tolist():
        sel = torch.nonzero(cls_idx == c, as_tuple=True)[0]
        for k in greedy_nms(cand_boxes[sel], cand_scores[sel], loc_idx[sel], nms_iou):
            kept.append(int(sel[k]))

    kept.sort(key=lambda i: (-float(cand_scores[i]), int(loc_idx[i]), int(cls_idx[i])))
    kept = kept[:max_dets]

    detections = []
    for i in kept:
        loc = int(loc_idx[i])
        box = tuple(float(v) for v in cand_boxes[i].tolist())
        mask = None
        if basis is not None and flat.mask_codes is not None and box[2] > box[0] and box[3] > box[1]:
            ibox  = _integer_box(box, H, W)
            patch = decode_mask(flat.mask_codes[batch_index, loc], ibox, basis)
            mask  = paste_mask(patch, ibox, (H, W))
        depth = float(flat.inst_depth[batch_index, loc]) if flat.inst_depth is not None else None
        detections.append(Detection(
            class_id     = int(cls_idx[i]),
            score        = float(cand_scores[i]),
            box          = box,
            mask         = mask,
            median_depth = depth,
            location     = loc,
        ))
    return detections
