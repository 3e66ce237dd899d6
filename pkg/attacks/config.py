import math
from dataclasses import dataclass, field
from typing import List, Literal, Optional

import numpy as np
import torch
from pydantic import BaseModel, Field, model_validator

from losses.bundle import GROUP_SELECTORS, LOSS_NAMES
from scenegen.spec import Sample
from uninet.outputs import DenseOutputs

SCHEMA_VERSION = "1"


class AttackError(Exception):
    pass


class HidingTargetError(AttackError):
    """Every pixel belongs to the class being hidden; there is nothing to fill from."""


def pgd_iterations(epsilon: float) -> int:
    """min(floor(eps) + 4, ceil(1.25 * eps)) on the 0-255 scale."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    return int(min(math.floor(epsilon) + 4, math.ceil(1.25 * epsilon)))


class AttackConfig(BaseModel):
    schema_version : str                        = Field(default=SCHEMA_VERSION)
    epsilon        : float                      = Field(default=1.0, ge=0, description="l_inf bound on the 0-255 scale")
    step           : float                      = Field(default=1.0, gt=0, description="step size alpha on the 0-255 scale")
    iterations     : Optional[int]              = Field(default=None, ge=0, description="None: min(floor(eps)+4, ceil(1.25 eps))")
    loss_selector  : str                        = Field(default="mtl", description="mtl | semantic | geometric | a single loss name")
    norm           : Literal["linf"]            = Field(default="linf")

    @model_validator(mode="after")
    def _known_selector(self):
        if self.loss_selector not in GROUP_SELECTORS + LOSS_NAMES:
            raise ValueError(f"unknown loss selector {self.loss_selector!r}; expected one of {GROUP_SELECTORS + LOSS_NAMES}")
        return self

    def resolved_iterations(self) -> int:
        return pgd_iterations(self.epsilon) if self.iterations is None else self.iterations


@dataclass
class AttackOutcome:
    kind             : str                               # pgd, dag, hide
    adversarial      : torch.Tensor                      # 1 x 3 x H x W, float64, [0, 1]
    perturbation     : torch.Tensor                      # adversarial - clean
    trace            : List[float] = field(default_factory=list)
    iterations       : int = 0
    clean_outputs    : Optional[DenseOutputs] = None
    adv_outputs      : Optional[DenseOutputs] = None
    flipped_fraction : Optional[float] = None            # DAG only; None when the target set was empty
    target_count     : int = 0

    @property
    def linf_255(self) -> float:
        return float(self.perturbation.abs().max()) * 255.0 if self.perturbation.numel() else 0.0

    def adversarial_hwc(self) -> np.ndarray:
        """H x W x 3 float32 image, the layout of Sample.image."""
        return self.adversarial[0].permute(1, 2, 0).detach().cpu().numpy().astype(np.float32)


def image_tensor(sample_or_image, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """1 x 3 x H x W tensor from a Sample, an H x W x 3 array or an image tensor."""
    if isinstance(sample_or_image, Sample):
        sample_or_image = sample_or_image.image
    if isinstance(sample_or_image, np.ndarray):
        t = torch.from_numpy(np.ascontiguousarray(sample_or_image)).permute(2, 0, 1)[None]
    else:
        t = sample_or_image if sample_or_image.dim() == 4 else sample_or_image[None]
    return t.detach().to(dtype)
