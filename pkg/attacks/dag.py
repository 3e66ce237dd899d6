"""
Targeted class swapping (dense adversary generation, modified for point anchors).

Target set: every pre-NMS location of the instance head whose top class
probability is at least `confidence` and whose argmax is c1 or c2; with
include_segmentation, also every pixel the segmentation head assigns to
c1 or c2. Each step pushes the swapped logit up and the current logit down
over the still-active set,

    r = grad_x sum_t [ z_{pi(c_t)}(t) - z_{c_t}(t) ],    pi(c1) = c2, pi(c2) = c1
    x <- clip_[0,1]( x + gamma * r / ||r||_inf )

and drops locations as soon as their argmax reaches pi(c_t).
"""
import logging
import time
from typing import Optional, Union

import torch

from attacks.config import AttackError, AttackOutcome, image_tensor
from attacks.pgd import project
from observability.prometheus_metrics import metrics
from scenegen.spec import Sample
from uninet.config import Task
from uninet.network import UniNet

logger = logging.getLogger(__name__)

DAG_CONFIDENCE = 0.3
DAG_GAMMA      = 0.5 / 255.0
DAG_MAX_ITERS  = 30


def normalized_step(r: torch.Tensor, gamma: float) -> torch.Tensor:
    """gamma * r / ||r||_inf; the step's l_inf norm is exactly gamma (zero for a zero direction)."""
    peak = r.abs().max()
    if peak == 0:
        return torch.zeros_like(r)
    return gamma * r / peak


class _SwapState:
    """Original class, swap class and activity flag per target location / pixel."""

    def __init__(self, current: torch.Tensor, eligible: torch.Tensor, c1: int, c2: int):
        self.index  = torch.nonzero(eligible, as_tuple=True)[0]
        orig        = current[self.index]
        self.orig   = orig
        self.swap   = torch.where(orig == c1, torch.full_like(orig, c2), torch.full_like(orig, c1))
        self.active = torch.ones_like(orig, dtype=torch.bool)

    @property
    def size(self) -> int:
        return int(self.index.numel())

    def update(self, current: torch.Tensor) -> None:
        self.active &= current[self.index] != self.swap

    def flipped(self, current: torch.Tensor) -> int:
        return int((current[self.index] == self.swap).sum())

    def direction_term(self, logits: torch.Tensor) -> torch.Tensor:
        """sum over active entries of z_swap - z_orig; logits: entries x classes."""
        idx = self.index[self.active]
        if idx.numel() == 0:
            return logits.sum() * 0.0
        rows = logits[idx]
        sw   = self.swap[self.active].unsqueeze(1)
        og   = self.orig[self.active].unsqueeze(1)
        return (rows.gather(1, sw) - rows.gather(1, og)).sum()


def _instance_logits(out) -> torch.Tensor:
    return out.flatten().cls_logits[0]                      # L x T


def _seg_logits(out) -> torch.Tensor:
    s = out.seg_logits[0]                                   # C x H x W
    return s.flatten(1).transpose(0, 1)                     # HW x C


def dag_swap_attack(
    model                : UniNet,
    sample               : Union[Sample, torch.Tensor],
    c1                   : int,
    c2                   : int,
    max_iters            : int   = DAG_MAX_ITERS,
    gamma                : float = DAG_GAMMA,
    confidence           : float = DAG_CONFIDENCE,
    include_segmentation : bool  = False,
    epsilon              : Optional[float] = None,
) -> AttackOutcome:
    """
    c1 and c2 are thing-class ids. gamma is on the [0, 1] scale; the optional
    epsilon (0-255 scale) additionally projects every iterate onto the l_inf ball.
    """
    T = model.config.num_thing_classes
    if c1 == c2:
        raise AttackError(f"swap classes must differ, got {c1} twice")
    for c in (c1, c2):
        if not 0 <= c < T:
            raise AttackError(f"class {c} is not a thing class (0..{T - 1})")
    if Task.OD not in model.tasks:
        raise AttackError("class swapping needs a model with object detection")
    if include_segmentation and Task.SS not in model.tasks:
        raise AttackError("include_segmentation needs a model with semantic segmentation")

    tasks  = {Task.OD, Task.SS} if include_segmentation else {Task.OD}
    S      = model.config.num_stuff_classes
    clean  = image_tensor(sample)
    eps    = None if epsilon is None else epsilon / 255.0
    started = time.perf_counter()

    with torch.no_grad():
        clean_outputs = model(clean.float())
        inst   = _instance_logits(clean_outputs)
        top, current = torch.sigmoid(inst).max(dim=1)
        inst_state = _SwapState(current, (top >= confidence) & ((current == c1) | (current == c2)), c1, c2)
        seg_state  = None
        if include_segmentation:
            seg_cur   = _seg_logits(clean_outputs).argmax(dim=1)
            seg_state = _SwapState(seg_cur, (seg_cur == S + c1) | (seg_cur == S + c2), S + c1, S + c2)

    total = inst_state.size + (seg_state.size if seg_state else 0)
    if total == 0:
        logger.info("[DAG] no confident class %d/%d predictions; returning the clean image", c1, c2)
        return AttackOutcome(kind="dag", adversarial=clean, perturbation=torch.zeros_like(clean),
                             clean_outputs=clean_outputs, adv_outputs=clean_outputs, target_count=0)

    x, trace, steps = clean.clone(), [], 0
    for _ in range(max_iters):
        x.requires_grad_(True)
        out  = model(x.float(), task_mask=tasks)
        inst = _instance_logits(out)
        inst_state.update(inst.detach().argmax(dim=1))
        objective = inst_state.direction_term(inst)
        remaining = int(inst_state.active.sum())
        if seg_state is not None:
            seg = _seg_logits(out)
            seg_state.update(seg.detach().argmax(dim=1))
            objective = objective + seg_state.direction_term(seg)
            remaining += int(seg_state.active.sum())
        if remaining == 0:
            break
        r, = torch.autograd.grad(objective, x)
        trace.append(float(objective.detach()))
        with torch.no_grad():
            delta = normalized_step(r, gamma)
            if not delta.any():
                break
            x = (x + delta).clamp(0.0, 1.0)
            if eps is not None:
                x = project(x, clean, eps)
        steps += 1
    x = x.detach()

    with torch.no_grad():
        adv_outputs = model(x.float())
        flipped = inst_state.flipped(_instance_logits(adv_outputs).argmax(dim=1))
        if seg_state is not None:
            flipped += seg_state.flipped(_seg_logits(adv_outputs).argmax(dim=1))

    elapsed = time.perf_counter() - started
    metrics.record_attack("dag", steps, elapsed)
    logger.debug("[DAG] swap %d<->%d: %d/%d flipped after %d steps", c1, c2, flipped, total, steps)
    return AttackOutcome(
        kind             = "dag",
        adversarial      = x,
        perturbation     = x - clean,
        trace            = trace,
        iterations       = steps,
        clean_outputs    = clean_outputs,
        adv_outputs      = adv_outputs,
        flipped_fraction = flipped / total,
        target_count     = total,
    )
