"""
Run and campaign configuration.

RunConfig describes one training run (task subset, data, schedule, loss
weights); Campaign describes a batch of attack cells evaluated against one
checkpoint on one split. Both are plain JSON on disk.
"""
from pathlib import Path
from typing import FrozenSet, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from attacks.config import AttackConfig
from losses.bundle import LossWeights
from uninet.config import ModelConfig, Task, format_tasks, parse_tasks, validate_task_mask

SCHEMA_VERSION = "1"


class RunnerError(Exception):
    pass


class NonFiniteLossError(RunnerError):
    def __init__(self, term: str, sample_ids, value: float):
        self.term       = term
        self.sample_ids = list(sample_ids)
        self.value      = value
        super().__init__(f"loss {term!r} became {value} on samples {', '.join(self.sample_ids)}")


class CellFailedError(RunnerError):
    pass


# ── Training ──────────────────────────────────────────────────────

class RunConfig(BaseModel):
    schema_version  : str                   = Field(default=SCHEMA_VERSION)
    tasks           : str                   = Field(default="od,ss,is,d,id", description="comma list of od,ss,is,d,id")
    train_manifest  : str                   = Field(description="dataset directory or manifest.json")
    val_manifest    : Optional[str]         = Field(default=None)
    out_dir         : str                   = Field(default="lab/run")
    epochs          : int                   = Field(default=60, ge=0)
    lr              : float                 = Field(default=1e-4, gt=0)
    milestones      : Tuple[float, ...]     = Field(default=(0.7, 0.9), description="lr drops as fractions of epochs")
    lr_decay        : float                 = Field(default=0.1, gt=0, le=1)
    batch_size      : int                   = Field(default=4, ge=1)
    weights         : LossWeights           = Field(default_factory=LossWeights)
    seed            : int                   = Field(default=0)
    eval_every      : int                   = Field(default=0, ge=0, description="epochs between validation runs, 0 = never")
    mask_side       : int                   = Field(default=16, ge=2, description="mask codec grid side m")
    workers         : int                   = Field(default=0, ge=0, description="data-loading workers; 0 keeps runs bit-reproducible")
    model           : ModelConfig           = Field(default_factory=ModelConfig)

    @field_validator("tasks")
    @classmethod
    def _valid_tasks(cls, v):
        return format_tasks(validate_task_mask(parse_tasks(v)))

    @field_validator("milestones")
    @classmethod
    def _fractions(cls, v):
        if any(not 0 < f <= 1 for f in v) or list(v) != sorted(v):
            raise ValueError(f"milestones must be increasing fractions in (0, 1], got {v}")
        return v

    @property
    def task_mask(self) -> FrozenSet[Task]:
        return parse_tasks(self.tasks)

    def milestone_epochs(self) -> List[int]:
        return sorted({max(1, round(f * self.epochs)) for f in self.milestones})

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2, by_alias=True))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        return cls.model_validate_json(Path(path).read_text())


# ── Attack campaigns ──────────────────────────────────────────────

class CampaignCell(BaseModel):
    name                 : str                                     = Field(description="unique cell name, used for file names")
    kind                 : Literal["pgd", "dag", "hide"]
    attack               : AttackConfig                            = Field(default_factory=AttackConfig,
                                                                           description="pgd: ε, α, iterations, loss selector")
    swap                 : Optional[Tuple[str, str]]               = Field(default=None, description="dag: class names c1, c2")
    dag_max_iters        : int                                     = Field(default=30, ge=1)
    dag_gamma            : float                                   = Field(default=0.5, gt=0, description="dag step, 0-255 scale")
    include_segmentation : bool                                    = Field(default=False)
    dag_epsilon          : Optional[float]                         = Field(default=None, ge=0)
    hide_class           : Optional[str]                           = Field(default=None, description="hide: thing class name")
    head                 : Literal["seg", "depth"]                 = Field(default="seg")

    @model_validator(mode="after")
    def _kind_fields(self):
        if self.kind == "dag":
            if self.swap is None or self.swap[0] == self.swap[1]:
                raise ValueError(f"dag cell {self.name!r} needs two distinct swap classes")
        if self.kind == "hide" and not self.hide_class:
            raise ValueError(f"hide cell {self.name!r} needs a class to hide")
        return self


class Campaign(BaseModel):
    schema_version : str                  = Field(default=SCHEMA_VERSION)
    checkpoint     : str
    manifest       : str                  = Field(description="evaluation split")
    out_dir        : str                  = Field(default="lab/campaign")
    cells          : List[CampaignCell]   = Field(default_factory=list)
    limit          : Optional[int]        = Field(default=None, ge=0, description="first N samples of the split")
    jobs           : int                  = Field(default=1, ge=1, description="worker threads sharding the images")
    save_examples  : int                  = Field(default=0, ge=0, description="attack artefacts kept per cell")

    @field_validator("cells")
    @classmethod
    def _unique_names(cls, v):
        names = [c.name for c in v]
        if len(names) != len(set(names)):
            raise ValueError(f"campaign cell names must be unique, got {names}")
        return v

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Campaign":
        return cls.model_validate_json(Path(path).read_text())
