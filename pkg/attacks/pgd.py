"""
Untargeted l_inf PGD over any loss subset of the multi-task network.

    x <- Proj_{eps-ball ∩ [0,1]}( x + (alpha/255) * sign(grad_x L_selected(x)) )

starting from the clean image. Ground-truth targets drive every loss.
The iterate lives in float64; the network sees float32 copies, so the
perturbation bound holds exactly on the returned image.
"""
import logging
import time
from typing import Callable, List, Optional, Tuple

import torch

from attacks.config import AttackConfig, AttackOutcome, image_tensor
from losses.bundle import (LossWeights, active_losses, compute_losses, losses_for_selector, selected_objective,
                           task_mask_of)
from losses.targets import DenseTargets, assign_targets
from maskcodec import PCABasis
from observability.prometheus_metrics import metrics
from scenegen.spec import Sample
from uninet.network import UniNet

logger = logging.getLogger(__name__)

Objective = Callable[[torch.Tensor], torch.Tensor]


def project(x: torch.Tensor, clean: torch.Tensor, eps: float) -> torch.Tensor:
    """Project onto the l_inf ball of radius eps around clean, intersected with [0, 1]."""
    x = torch.max(torch.min(x, clean + eps), clean - eps)
    return x.clamp(0.0, 1.0)


def signed_gradient_steps(
    objective  : Objective,
    clean      : torch.Tensor,
    eps        : float,
    step       : float,
    iterations : int,
    ascend     : bool = True,
) -> Tuple[torch.Tensor, List[float]]:
    """
    Run projected sign-gradient steps. eps and step are on the [0, 1] scale.
    Returns the final iterate and the objective trace (initial value first,
    one entry per step after it).
    """
    x     = clean.clone()
    trace: List[float] = []
    sign  = 1.0 if ascend else -1.0
    for _ in range(iterations):
        x.requires_grad_(True)
        value = objective(x)
        grad, = torch.autograd.grad(value, x)
        trace.append(float(value.detach()))
        with torch.no_grad():
            x = project(x + sign * step * grad.sign(), clean, eps)
    with torch.no_grad():
        trace.append(float(objective(x)))
    return x.detach(), trace


def pgd_attack(
    model         : UniNet,
    sample        : Sample,
    cfg           : AttackConfig,
    basis         : Optional[PCABasis] = None,
    class_weights : Optional[torch.Tensor] = None,
    weights       : Optional[LossWeights] = None,
    targets       : Optional[DenseTargets] = None,
) -> AttackOutcome:
    weights = weights or LossWeights()
    names   = losses_for_selector(cfg.loss_selector, model.tasks)
    mask    = task_mask_of(names)
    active  = [n for n in active_losses(model.tasks) if n in names]
    if targets is None:
        targets = assign_targets(sample, model.config, basis)
    clean   = image_tensor(sample)
    eps     = cfg.epsilon / 255.0
    iters   = cfg.resolved_iterations()

    def objective(x: torch.Tensor) -> torch.Tensor:
        out    = model(x.float(), task_mask=mask)
        bundle = compute_losses(out, targets, names, class_weights)
        return selected_objective(bundle, cfg.loss_selector, weights, active)

    started = time.perf_counter()
    with torch.no_grad():
        clean_outputs = model(clean.float())

    if eps == 0 or iters == 0:
        with torch.no_grad():
            trace = [float(objective(clean))]
        return AttackOutcome(kind="pgd", adversarial=clean, perturbation=torch.zeros_like(clean),
                             trace=trace, iterations=0, clean_outputs=clean_outputs, adv_outputs=clean_outputs)

    adv, trace = signed_gradient_steps(objective, clean, eps, cfg.step / 255.0, iters, ascend=True)
    with torch.no_grad():
        adv_outputs = model(adv.float())

    elapsed = time.perf_counter() - started
    metrics.record_attack("pgd", iters, elapsed)
    logger.debug("[PGD] %s eps=%s loss=%s objective %.4f -> %.4f in %.2fs",
                 sample.sample_id, cfg.epsilon, cfg.loss_selector, trace[0], trace[-1], elapsed)
    return AttackOutcome(
        kind          = "pgd",
        adversarial   = adv,
        perturbation  = adv - clean,
        trace         = trace,
        iterations    = iters,
        clean_outputs = clean_outputs,
        adv_outputs   = adv_outputs,
    )
