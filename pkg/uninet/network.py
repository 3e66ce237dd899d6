"""
UniNet: shared encoder, shared decoder for the pixel tasks, and an
FPN-based instance head predicting detection, mask codes and instance depth
at every point anchor of P3..P5.

    image ──► encoder E2..E7 ──► decoder D2..D6 ──► segmentation head
                     │                         └──► depth head
                     └─ E3,E4,E5 ──► FPN P3..P5 ──► instance head
"""
import math
from typing import Dict, Iterable, List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from uninet.blocks import ResBlock, conv_norm_act, upsample_to
from uninet.config import (
    ALL_TASKS,
    DECODER_LEVELS,
    ENCODER_LEVELS,
    INSTANCE_LEVELS,
    MAX_STRIDE,
    ModelConfig,
    ModelConfigError,
    ShapeError,
    Task,
    stride_of,
    validate_task_mask,
)
from uninet.outputs import DenseOutputs, LevelOutputs

MAX_LOG_DIST = 12.0


def inverse_softplus(y: float) -> float:
    return y + math.log(-math.expm1(-y))


class Encoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        widths   = config.encoder_channels
        stem_out = max(widths[0] // 2, 8)
        self.stem = nn.Sequential(
            conv_norm_act(3, stem_out, stride=2),
            conv_norm_act(stem_out, widths[0], stride=2),
        )
        self.stages = nn.ModuleList([ResBlock(widths[0], widths[0], stride=1)])
        for prev, cur in zip(widths[:-1], widths[1:]):
            self.stages.append(ResBlock(prev, cur, stride=2))

    def forward(self, image: torch.Tensor) -> Dict[int, torch.Tensor]:
        x     = self.stem(image)
        feats = {}
        for level, stage in zip(ENCODER_LEVELS, self.stages):
            x = stage(x)
            feats[level] = x
        return feats


class Decoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.decoder_channels
        self.blocks = nn.ModuleDict()
        self.blocks["6"] = ResBlock(config.encoder_width(6) + config.encoder_width(7), d)
        for level in (5, 4, 3, 2):
            self.blocks[str(level)] = ResBlock(config.encoder_width(level) + d, d)
        self.expected = {lvl: config.encoder_width(lvl) for lvl in ENCODER_LEVELS}

    def forward(self, feats: Dict[int, torch.Tensor]) -> Dict[int, torch.Tensor]:
        for level, width in self.expected.items():
            if feats[level].shape[1] != width:
                raise ShapeError(f"E{level} has {feats[level].shape[1]} channels, decoder expects {width}")
        out  = {}
        prev = feats[7]
        for level in (6, 5, 4, 3, 2):
            x = torch.cat([feats[level], upsample_to(prev, feats[level])], dim=1)
            prev = out[level] = self.blocks[str(level)](x)
        return out


class FPN(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.fpn_channels
        self.lateral = nn.ModuleDict({str(l): nn.Conv2d(config.encoder_width(l), c, 1) for l in INSTANCE_LEVELS})
        self.smooth  = nn.ModuleDict({str(l): nn.Conv2d(c, c, 3, padding=1) for l in INSTANCE_LEVELS})

    def forward(self, feats: Dict[int, torch.Tensor]) -> Dict[int, torch.Tensor]:
        p5 = self.lateral["5"](feats[5])
        p4 = self.lateral["4"](feats[4]) + upsample_to(p5, feats[4])
        p3 = self.lateral["3"](feats[3]) + upsample_to(p4, feats[3])
        return {3: self.smooth["3"](p3), 4: self.smooth["4"](p4), 5: self.smooth["5"](p5)}


class InstanceHead(nn.Module):
    """Towers shared across P3..P5; per-level outputs differ only through their input features."""

    def __init__(self, config: ModelConfig, with_masks: bool, with_depth: bool, prior_prob: float = 0.01):
        super().__init__()
        c, h = config.fpn_channels, config.head_channels
        self.fpn = FPN(config)

        def tower() -> nn.Sequential:
            layers = [conv_norm_act(c, h)]
            layers += [conv_norm_act(h, h) for _ in range(config.tower_convs - 1)]
            return nn.Sequential(*layers)

        self.cls_tower  = tower()
        self.reg_tower  = tower()
        self.cls_logits = nn.Conv2d(h, config.num_thing_classes, 3, padding=1)
        self.centerness = nn.Conv2d(h, 1, 3, padding=1)
        self.box_dists  = nn.Conv2d(h, 4, 3, padding=1)
        self.mask_codes = nn.Conv2d(h, config.mask_code_dim, 3, padding=1) if with_masks else None
        self.inst_depth = nn.Conv2d(h, 1, 3, padding=1) if with_depth else None

        nn.init.constant_(self.cls_logits.bias, -math.log((1 - prior_prob) / prior_prob))
        nn.init.zeros_(self.box_dists.bias)
        if self.inst_depth is not None:
            nn.init.constant_(self.inst_depth.bias, inverse_softplus(config.depth_init))

    def forward(self, feats: Dict[int, torch.Tensor], with_masks: bool = True,
                with_depth: bool = True) -> Dict[int, LevelOutputs]:
        pyramid = self.fpn(feats)
        out = {}
        for level in INSTANCE_LEVELS:
            p      = pyramid[level]
            stride = stride_of(level)
            cls_f  = self.cls_tower(p)
            reg_f  = self.reg_tower(p)
            out[level] = LevelOutputs(
                stride     = stride,
                cls_logits = self.cls_logits(cls_f),
                centerness = self.centerness(cls_f),
                box_dists  = stride * torch.exp(self.box_dists(reg_f).clamp(max=MAX_LOG_DIST)),
                mask_codes = self.mask_codes(reg_f) if (with_masks and self.mask_codes is not None) else None,
                inst_depth = F.softplus(self.inst_depth(reg_f)) if (with_depth and self.inst_depth is not None) else None,
            )
        return out


class PixelHead(nn.Module):
    """Reduce D2..D6 to a common width at 1/4 resolution, fuse, upsample, predict."""

    def __init__(self, config: ModelConfig, out_channels: int):
        super().__init__()
        r = config.pixel_reduce_channels
        self.reduce = nn.ModuleDict({str(l): nn.Conv2d(config.decoder_channels, r, 1) for l in DECODER_LEVELS})
        self.fuse   = conv_norm_act(r * len(DECODER_LEVELS), config.head_channels)
        self.out    = nn.Conv2d(config.head_channels, out_channels, 3, padding=1)

    def fused(self, dec: Dict[int, torch.Tensor]) -> torch.Tensor:
        ref = dec[2]
        parts = [upsample_to(self.reduce[str(l)](dec[l]), ref) for l in DECODER_LEVELS]
        return torch.cat(parts, dim=1)

    def forward(self, dec: Dict[int, torch.Tensor], image_size) -> torch.Tensor:
        x = self.fuse(self.fused(dec))
        x = F.interpolate(x, size=tuple(image_size), mode="bilinear", align_corners=False)
        return self.out(x)


class DepthHead(PixelHead):
    def __init__(self, config: ModelConfig):
        super().__init__(config, out_channels=1)
        nn.init.constant_(self.out.bias, inverse_softplus(config.depth_init))

    def forward(self, dec: Dict[int, torch.Tensor], image_size) -> torch.Tensor:
        return F.softplus(super().forward(dec, image_size)) + 1e-3


class UniNet(nn.Module):
    def __init__(self, config: ModelConfig, tasks: Iterable = ALL_TASKS):
        super().__init__()
        self.config = config
        self.tasks  = validate_task_mask(tasks)
        # initialisation draws from its own seeded stream; the global RNG is restored afterwards
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.encoder       = Encoder(config)
            self.decoder       = Decoder(config) if self.tasks & {Task.SS, Task.D} else None
            self.instance_head = (InstanceHead(config, with_masks=Task.IS in self.tasks, with_depth=Task.ID in self.tasks)
                                  if Task.OD in self.tasks else None)
            self.seg_head      = PixelHead(config, config.num_classes) if Task.SS in self.tasks else None
            self.depth_head    = DepthHead(config) if Task.D in self.tasks else None

    # ── Stages ────────────────────────────────────────────────────

    def encode(self, image: torch.Tensor) -> Dict[int, torch.Tensor]:
        if image.dim() != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected an N x 3 x H x W image batch, got {tuple(image.shape)}")
        h, w = image.shape[-2:]
        if h % MAX_STRIDE or w % MAX_STRIDE:
            raise ShapeError(f"image size {h}x{w} must be divisible by {MAX_STRIDE}")
        return self.encoder(image)

    def decode(self, feats: Dict[int, torch.Tensor]) -> Dict[int, torch.Tensor]:
        if self.decoder is None:
            raise ModelConfigError("this model was built without a decoder (no 'ss' or 'd' task)")
        return self.decoder(feats)

    def resolve_mask(self, task_mask: Optional[Iterable]) -> frozenset:
        mask = self.tasks if task_mask is None else validate_task_mask(task_mask)
        missing = mask - self.tasks
        if missing:
            raise ModelConfigError(f"model was not built for tasks {sorted(t.value for t in missing)}")
        return mask

    def forward(self, image: torch.Tensor, task_mask: Optional[Iterable] = None) -> DenseOutputs:
        mask  = self.resolve_mask(task_mask)
        feats = self.encode(image)
        out   = DenseOutputs(image_size=tuple(image.shape[-2:]))

        if Task.OD in mask:
            out.levels = self.instance_head(feats, with_masks=Task.IS in mask, with_depth=Task.ID in mask)
        if mask & {Task.SS, Task.D}:
            dec = self.decode(feats)
            if Task.SS in mask:
                out.seg_logits = self.seg_head(dec, out.image_size)
            if Task.D in mask:
                out.depth_map = self.depth_head(dec, out.image_size)
        return out

    # ── Parameter bookkeeping ─────────────────────────────────────

    def modules_for(self, task_mask: Optional[Iterable] = None) -> Dict[str, nn.Module]:
        mask = self.resolve_mask(task_mask)
        mods = {"encoder": self.encoder}
        if Task.OD in mask:
            mods["instance_head"] = self.instance_head
        if mask & {Task.SS, Task.D}:
            mods["decoder"] = self.decoder
        if Task.SS in mask:
            mods["seg_head"] = self.seg_head
        if Task.D in mask:
            mods["depth_head"] = self.depth_head
        return mods

    def parameters_for(self, task_mask: Optional[Iterable] = None) -> List[nn.Parameter]:
        mask   = self.resolve_mask(task_mask)
        params = []
        for name, module in self.modules_for(mask).items():
            for pname, p in module.named_parameters():
                if name == "instance_head":
                    if pname.startswith("mask_codes") and Task.IS not in mask:
                        continue
                    if pname.startswith("inst_depth") and Task.ID not in mask:
                        continue
                params.append(p)
        return params
