from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import torch

from uninet.config import INSTANCE_LEVELS, stride_of


@dataclass
class LevelOutputs:
    stride      : int
    cls_logits  : torch.Tensor                    # N x T x h x w
    centerness  : torch.Tensor                    # N x 1 x h x w (logits)
    box_dists   : torch.Tensor                    # N x 4 x h x w, l/t/r/b pixels
    mask_codes  : Optional[torch.Tensor] = None   # N x k x h x w
    inst_depth  : Optional[torch.Tensor] = None   # N x 1 x h x w, meters


@dataclass
class FlatInstanceOutputs:
    """Instance maps of all levels concatenated over locations (P3 row-major, then P4, then P5)."""
    cls_logits  : torch.Tensor                    # N x L x T
    centerness  : torch.Tensor                    # N x L
    box_dists   : torch.Tensor                    # N x L x 4
    points      : torch.Tensor                    # L x 2 (x, y) pixel coordinates
    strides     : torch.Tensor                    # L
    mask_codes  : Optional[torch.Tensor] = None   # N x L x k
    inst_depth  : Optional[torch.Tensor] = None   # N x L

    @property
    def num_locations(self) -> int:
        return self.points.shape[0]

    def boxes(self) -> torch.Tensor:
        """N x L x 4 boxes (x0, y0, x1, y1) reconstructed around each point anchor."""
        px, py = self.points[:, 0], self.points[:, 1]
        l, t, r, b = self.box_dists.unbind(-1)
        return torch.stack([px - l, py - t, px + r, py + b], dim=-1)


@dataclass
class DenseOutputs:
    image_size : Tuple[int, int]
    levels     : Dict[int, LevelOutputs] = field(default_factory=dict)
    seg_logits : Optional[torch.Tensor] = None   # N x C x H x W
    depth_map  : Optional[torch.Tensor] = None   # N x 1 x H x W

    @property
    def has_instances(self) -> bool:
        return bool(self.levels)

    def flatten(self) -> FlatInstanceOutputs:
        if not self.levels:
            raise ValueError("dense outputs carry no instance maps")
        parts = {"cls": [], "cent": [], "box": [], "mask": [], "depth": [], "pts": [], "strides": []}
        for level in INSTANCE_LEVELS:
            out = self.levels[level]
            n, _, h, w = out.cls_logits.shape
            parts["cls"].append(out.cls_logits.flatten(2).transpose(1, 2))
            parts["cent"].append(out.centerness.flatten(1))
            parts["box"].append(out.box_dists.flatten(2).transpose(1, 2))
            if out.mask_codes is not None:
                parts["mask"].append(out.mask_codes.flatten(2).transpose(1, 2))
            if out.inst_depth is not None:
                parts["depth"].append(out.inst_depth.flatten(1))
            pts = anchor_points(h, w, out.stride, device=out.cls_logits.device, dtype=out.box_dists.dtype)
            parts["pts"].append(pts)
            parts["strides"].append(torch.full((h * w,), float(out.stride), device=pts.device, dtype=pts.dtype))
        return FlatInstanceOutputs(
            cls_logits = torch.cat(parts["cls"], dim=1),
            centerness = torch.cat(parts["cent"], dim=1),
            box_dists  = torch.cat(parts["box"], dim=1),
            points     = torch.cat(parts["pts"], dim=0),
            strides    = torch.cat(parts["strides"], dim=0),
            mask_codes = torch.cat(parts["mask"], dim=1) if parts["mask"] else None,
            inst_depth = torch.cat(parts["depth"], dim=1) if parts["depth"] else None,
        )


def anchor_points(h: int, w: int, stride: int, device=None, dtype=torch.float32) -> torch.Tensor:
    ys = (torch.arange(h, device=device, dtype=dtype) + 0.5) * stride
    xs = (torch.arange(w, device=device, dtype=dtype) + 0.5) * stride
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([xx.reshape(-1), yy.reshape(-1)], dim=-1)


def level_shapes(image_height: int, image_width: int):
    """(level, stride, h, w) for the instance levels of an image."""
    return [(lvl, stride_of(lvl), image_height // stride_of(lvl), image_width // stride_of(lvl))
            for lvl in INSTANCE_LEVELS]
