"""
Coarse forward-pass timer: mean wall-clock of single-image forwards on
random inputs.
"""
import logging
import time
from pathlib import Path
from typing import Iterable, Optional, Tuple, Union

import torch

from observability.prometheus_metrics import metrics
from uninet.checkpoint import load_checkpoint
from uninet.config import format_tasks
from uninet.network import UniNet

logger = logging.getLogger(__name__)

WARMUP = 3


def timing_probe(
    model_or_checkpoint : Union[UniNet, str, Path],
    n                   : int = 100,
    task_mask           : Optional[Iterable] = None,
    image_size          : Optional[Tuple[int, int]] = None,
    seed                : int = 0,
) -> float:
    """Mean seconds per forward over `n` batch-size-1 forwards (after a short warm-up)."""
    if n <= 0:
        raise ValueError(f"timing_probe needs n >= 1, got {n}")

    if isinstance(model_or_checkpoint, UniNet):
        model, extra = model_or_checkpoint, {}
    else:
        model, extra = load_checkpoint(model_or_checkpoint)
    mask = model.resolve_mask(task_mask)
    h, w = image_size or tuple(extra.get("image_size") or (128, 128))

    gen   = torch.Generator().manual_seed(seed)
    image = torch.rand(1, 3, h, w, generator=gen)
    tag   = format_tasks(mask)

    model.eval()
    total = 0.0
    with torch.no_grad():
        for _ in range(WARMUP):
            model(image, task_mask=mask)
        for _ in range(n):
            start = time.perf_counter()
            model(image, task_mask=mask)
            elapsed = time.perf_counter() - start
            metrics.record_forward(tag, elapsed)
            total += elapsed

    mean = total / n
    logger.info("[Timing] tasks=%s %dx%d: %.2f ms/forward over %d runs", tag, h, w, mean * 1e3, n)
    return mean
