"""
Loss bundles, the semantic/geometric groupings and the geometric-mean MTL loss.

    L_semantic  = L_reg + L_cls + L_seg + L_is
    L_geometric = L_depth + L_id
    L_MTL       = prod_i (lambda_i * L_i) ** (1 / n)     over the active losses

L_cent trains the centerness branch but belongs to neither group.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Optional, Tuple

import torch
from pydantic import BaseModel, Field

from losses.targets import DenseTargets
from losses.task_losses import loss_cent, loss_cls, loss_depth, loss_id, loss_is, loss_reg, loss_seg
from observability.prometheus_metrics import metrics
from uninet.config import Task, validate_task_mask
from uninet.outputs import DenseOutputs

logger = logging.getLogger(__name__)

LOSS_NAMES        = ("reg", "cls", "cent", "seg", "is", "depth", "id")
SEMANTIC_LOSSES   = ("reg", "cls", "seg", "is")
GEOMETRIC_LOSSES  = ("depth", "id")
TASK_LOSSES: Dict[Task, Tuple[str, ...]] = {
    Task.OD: ("reg", "cls", "cent"),
    Task.SS: ("seg",),
    Task.IS: ("is",),
    Task.D : ("depth",),
    Task.ID: ("id",),
}
GROUP_SELECTORS   = ("mtl", "semantic", "geometric")
MTL_FLOOR         = 1e-8


class LossWeights(BaseModel):
    reg   : float = Field(default=1.0, gt=0)
    cls   : float = Field(default=1.0, gt=0)
    cent  : float = Field(default=1.0, gt=0)
    seg   : float = Field(default=1.0, gt=0)
    is_   : float = Field(default=1.0, gt=0, alias="is")
    depth : float = Field(default=1.0, gt=0)
    id    : float = Field(default=1.0, gt=0)

    model_config = {"populate_by_name": True}

    def of(self, name: str) -> float:
        return self.is_ if name == "is" else getattr(self, name)

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(**{n: self.of(n) * factor for n in LOSS_NAMES})


@dataclass
class LossBundle:
    """Named loss scalars; a loss that was not computed is absent (None)."""
    terms: Dict[str, torch.Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.terms[name]

    def get(self, name: str) -> Optional[torch.Tensor]:
        return self.terms.get(name)

    @property
    def semantic(self) -> torch.Tensor:
        return grouped_losses(self)[0]

    @property
    def geometric(self) -> torch.Tensor:
        return grouped_losses(self)[1]

    def as_floats(self) -> Dict[str, float]:
        return {n: float(v.detach()) for n, v in self.terms.items()}


def active_losses(task_mask: Iterable) -> Tuple[str, ...]:
    """Loss names trained for a task mask, in canonical order."""
    mask  = validate_task_mask(task_mask)
    names = {n for task in mask for n in TASK_LOSSES[task]}
    return tuple(n for n in LOSS_NAMES if n in names)


def losses_for_selector(selector: str, task_mask: Iterable) -> Tuple[str, ...]:
    """Individual losses a PGD loss selector needs, restricted to what the model predicts."""
    available = active_losses(task_mask)
    if selector == "mtl":
        names = available
    elif selector == "semantic":
        names = tuple(n for n in SEMANTIC_LOSSES if n in available)
    elif selector == "geometric":
        names = tuple(n for n in GEOMETRIC_LOSSES if n in available)
    elif selector in LOSS_NAMES:
        if selector not in available:
            raise ValueError(f"loss {selector!r} is not available for tasks {sorted(t.value for t in validate_task_mask(task_mask))}")
        names = (selector,)
    else:
        raise ValueError(f"unknown loss selector {selector!r}; expected one of {GROUP_SELECTORS + LOSS_NAMES}")
    if not names:
        raise ValueError(f"loss selector {selector!r} selects no loss for this model")
    return names


def compute_losses(outputs: DenseOutputs, targets: DenseTargets, names: Iterable[str],
                   class_weights: Optional[torch.Tensor] = None) -> LossBundle:
    """Evaluate only the requested losses; each one reads only its own outputs and targets."""
    names  = tuple(names)
    bundle = LossBundle()
    flat   = outputs.flatten() if outputs.has_instances and set(names) & {"reg", "cls", "cent", "is", "id"} else None

    for name in names:
        if name == "cls":
            bundle.terms[name] = loss_cls(flat.cls_logits, targets)
        elif name == "reg":
            bundle.terms[name] = loss_reg(flat.box_dists, targets)
        elif name == "cent":
            bundle.terms[name] = loss_cent(flat.centerness, targets)
        elif name == "is":
            bundle.terms[name] = loss_is(flat.mask_codes, targets)
        elif name == "id":
            bundle.terms[name] = loss_id(flat.inst_depth, targets)
        elif name == "seg":
            bundle.terms[name] = loss_seg(outputs.seg_logits, targets.seg_gt, class_weights)
        elif name == "depth":
            bundle.terms[name] = loss_depth(outputs.depth_map, targets.depth_gt, targets.depth_valid)
        else:
            raise ValueError(f"unknown loss {name!r}")
    return bundle


def _sum(bundle: LossBundle, names: Tuple[str, ...]) -> torch.Tensor:
    present = [bundle.terms[n] for n in names if n in bundle.terms]
    if not present:
        return torch.tensor(0.0)
    total = present[0]
    for v in present[1:]:
        total = total + v
    return total


def grouped_losses(bundle: LossBundle) -> Tuple[torch.Tensor, torch.Tensor]:
    """(L_semantic, L_geometric); absent terms count as zero."""
    return _sum(bundle, SEMANTIC_LOSSES), _sum(bundle, GEOMETRIC_LOSSES)


def mtl_loss(bundle: LossBundle, weights: LossWeights, active: Iterable[str]) -> torch.Tensor:
    """Geometric mean of lambda_i * L_i over the active losses, each term floored at 1e-8."""
    active = tuple(active)
    if not active:
        raise ValueError("mtl_loss needs at least one active loss")
    logs = []
    for name in active:
        term = bundle.terms[name] * weights.of(name)
        if float(term.detach()) <= MTL_FLOOR:
            logger.warning("[MTL] loss %r = %.3g clamped to %s", name, float(term.detach()), MTL_FLOOR)
            metrics.record_mtl_clamp(name)
        logs.append(torch.log(term.clamp_min(MTL_FLOOR)))
    return torch.exp(torch.stack(logs).mean())


def selected_objective(bundle: LossBundle, selector: str, weights: LossWeights, active: Iterable[str]) -> torch.Tensor:
    """Scalar maximised by PGD for a loss selector."""
    if selector == "mtl":
        return mtl_loss(bundle, weights, active)
    if selector == "semantic":
        return grouped_losses(bundle)[0]
    if selector == "geometric":
        return grouped_losses(bundle)[1]
    return bundle.terms[selector]


def task_mask_of(names: Iterable[str]) -> FrozenSet[Task]:
    """Smallest task mask whose forward pass produces every named loss."""
    tasks = {task for task, owned in TASK_LOSSES.items() if set(owned) & set(names)}
    if tasks & {Task.IS, Task.ID}:
        tasks.add(Task.OD)
    return frozenset(tasks)
