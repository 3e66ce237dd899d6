"""
Semantic category hiding.

The attacker takes the clean prediction, replaces every pixel of the hidden
class by its Euclidean-nearest pixel of another class (segmentation target)
or by that pixel's predicted depth (depth target), and drives the network
towards the edited map with signed-gradient descent inside the ε-ball.
"""
import logging
import time
from typing import Literal, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree

from attacks.config import AttackError, AttackOutcome, HidingTargetError, image_tensor, pgd_iterations
from attacks.pgd import signed_gradient_steps
from losses.task_losses import loss_depth
from observability.prometheus_metrics import metrics
from scenegen.spec import Sample
from uninet.config import Task
from uninet.network import UniNet

logger = logging.getLogger(__name__)

Head = Literal["seg", "depth"]

HIDING_EPSILON = 2.0


def _nearest_sources(pred_seg: np.ndarray, target_class: int) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """
    (target pixel coords K x 2, source pixel coords K x 2) with each source the
    Euclidean-nearest non-target pixel; ties go to the smallest row-major index.
    None when the map has no target pixel.
    """
    target = np.asarray(pred_seg) == target_class
    if not target.any():
        return None
    if target.all():
        raise HidingTargetError(f"every pixel is class {target_class}; no pixel to fill from")

    dist    = distance_transform_edt(target)
    sources = np.argwhere(~target)                       # row-major order
    tree    = cKDTree(sources)
    tgt     = np.argwhere(target)
    radii   = dist[target] + 1e-6
    picked  = np.empty(len(tgt), dtype=np.int64)
    for i, (p, r) in enumerate(zip(tgt, radii)):
        picked[i] = min(tree.query_ball_point(p, r))
    return tgt, sources[picked]


def build_hiding_target_seg(pred_seg: np.ndarray, target_class: int) -> np.ndarray:
    pred_seg = np.asarray(pred_seg)
    out = pred_seg.copy()
    found = _nearest_sources(pred_seg, target_class)
    if found is None:
        return out
    tgt, src = found
    out[tgt[:, 0], tgt[:, 1]] = pred_seg[src[:, 0], src[:, 1]]
    return out


def build_hiding_target_depth(pred_seg: np.ndarray, pred_depth: np.ndarray, target_class: int) -> np.ndarray:
    pred_seg, pred_depth = np.asarray(pred_seg), np.asarray(pred_depth)
    if pred_seg.shape != pred_depth.shape:
        raise ValueError(f"segmentation {pred_seg.shape} and depth {pred_depth.shape} are not co-registered")
    out = pred_depth.copy()
    found = _nearest_sources(pred_seg, target_class)
    if found is None:
        return out
    tgt, src = found
    out[tgt[:, 0], tgt[:, 1]] = pred_depth[src[:, 0], src[:, 1]]
    return out


def hiding_attack(
    model      : UniNet,
    sample     : Union[Sample, torch.Tensor],
    target_map : np.ndarray,
    head       : Head  = "seg",
    epsilon    : float = HIDING_EPSILON,
    step       : float = 1.0,
    iterations : Optional[int] = None,
) -> AttackOutcome:
    """
    head="seg": minimise cross entropy of seg_logits against the target class map.
    head="depth": minimise RMSE of depth_map against the target depth map.
    epsilon and step are on the 0-255 scale.
    """
    if head == "seg":
        task = Task.SS
    elif head == "depth":
        task = Task.D
    else:
        raise AttackError(f"unknown hiding head {head!r}; expected 'seg' or 'depth'")
    if task not in model.tasks:
        raise AttackError(f"model has no {head} head to attack")

    clean  = image_tensor(sample)
    iters  = pgd_iterations(epsilon) if iterations is None else iterations
    target = torch.from_numpy(np.asarray(target_map))
    if head == "seg":
        target = target.long()[None]
    else:
        target = target.float()[None, None]

    def objective(x: torch.Tensor) -> torch.Tensor:
        out = model(x.float(), task_mask={task})
        if head == "seg":
            return F.cross_entropy(out.seg_logits, target)
        return loss_depth(out.depth_map, target)

    started = time.perf_counter()
    with torch.no_grad():
        clean_outputs = model(clean.float())

    if epsilon == 0 or iters == 0:
        with torch.no_grad():
            value = float(objective(clean))
        return AttackOutcome(kind="hide", adversarial=clean, perturbation=torch.zeros_like(clean),
                             trace=[value] * (iters + 1), iterations=0,
                             clean_outputs=clean_outputs, adv_outputs=clean_outputs)

    adv, trace = signed_gradient_steps(objective, clean, epsilon / 255.0, step / 255.0, iters, ascend=False)
    with torch.no_grad():
        adv_outputs = model(adv.float())

    elapsed = time.perf_counter() - started
    metrics.record_attack("hide", iters, elapsed)
    logger.debug("[Hide] head=%s eps=%s: objective %.4f -> %.4f", head, epsilon, trace[0], trace[-1])
    return AttackOutcome(
        kind          = "hide",
        adversarial   = adv,
        perturbation  = adv - clean,
        trace         = trace,
        iterations    = iters,
        clean_outputs = clean_outputs,
        adv_outputs   = adv_outputs,
    )


def hide_class(
    model      : UniNet,
    sample     : Union[Sample, torch.Tensor],
    thing_id   : int,
    head       : Head  = "seg",
    epsilon    : float = HIDING_EPSILON,
    step       : float = 1.0,
    iterations : Optional[int] = None,
) -> AttackOutcome:
    """Build the hiding target from the clean prediction and run hiding_attack."""
    if Task.SS not in model.tasks:
        raise AttackError("hiding needs a segmentation head to locate the class")
    seg_class = model.config.num_stuff_classes + thing_id
    with torch.no_grad():
        clean = model(image_tensor(sample).float())
    pred_seg = clean.seg_logits[0].argmax(dim=0).cpu().numpy()
    if head == "seg":
        target = build_hiding_target_seg(pred_seg, seg_class)
    else:
        if clean.depth_map is None:
            raise AttackError("model has no depth head to attack")
        target = build_hiding_target_depth(pred_seg, clean.depth_map[0, 0].cpu().numpy(), seg_class)
    return hiding_attack(model, sample, target, head=head, epsilon=epsilon, step=step, iterations=iterations)
