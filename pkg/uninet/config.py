from enum import Enum
from typing import FrozenSet, Iterable, List, Tuple

from pydantic import BaseModel, Field, field_validator

SCHEMA_VERSION   = "1"
ENCODER_STRIDES  = (4, 8, 16, 32, 64, 128)      # E2 .. E7
ENCODER_LEVELS   = (2, 3, 4, 5, 6, 7)
DECODER_LEVELS   = (2, 3, 4, 5, 6)
INSTANCE_LEVELS  = (3, 4, 5)
MAX_STRIDE       = ENCODER_STRIDES[-1]


class ModelConfigError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class Task(str, Enum):
    OD = "od"
    SS = "ss"
    IS = "is"
    D  = "d"
    ID = "id"


ALL_TASKS: FrozenSet[Task] = frozenset(Task)
SEMANTIC_TASKS  = frozenset({Task.OD, Task.SS, Task.IS})
GEOMETRIC_TASKS = frozenset({Task.D, Task.ID})


def parse_tasks(spec: Iterable) -> FrozenSet[Task]:
    """Accept "od,ss" strings or iterables of names / Task members."""
    if isinstance(spec, str):
        spec = [s for s in spec.split(",") if s.strip()]
    try:
        return frozenset(Task(str(getattr(s, "value", s)).strip().lower()) for s in spec)
    except ValueError as e:
        raise ModelConfigError(f"unknown task in {spec!r}; valid: {[t.value for t in Task]}") from e


def validate_task_mask(tasks: Iterable) -> FrozenSet[Task]:
    mask = parse_tasks(tasks)
    if not mask:
        raise ModelConfigError("task mask must select at least one task")
    for dependent in (Task.IS, Task.ID):
        if dependent in mask and Task.OD not in mask:
            raise ModelConfigError(
                f"task '{dependent.value}' cannot be trained without object detection ('od')"
            )
    return mask


def format_tasks(tasks: Iterable[Task]) -> str:
    order = [t for t in Task if t in set(tasks)]
    return ",".join(t.value for t in order)


class ModelConfig(BaseModel):
    schema_version        : str                    = Field(default=SCHEMA_VERSION)
    num_stuff_classes     : int                    = Field(default=2, ge=0)
    num_thing_classes     : int                    = Field(default=3, ge=1)
    encoder_channels      : Tuple[int, ...]        = Field(default=(16, 24, 32, 48, 64, 64), description="E2..E7 widths")
    decoder_channels      : int                    = Field(default=32, gt=0, description="width of D2..D6")
    head_channels         : int                    = Field(default=48, gt=0, description="instance tower / pixel head width")
    tower_convs           : int                    = Field(default=2, ge=1)
    pixel_reduce_channels : int                    = Field(default=64, gt=0, description="per-level reduction in the pixel heads")
    mask_code_dim         : int                    = Field(default=32, ge=1, description="k, shared with the mask codec")
    fpn_channels          : int                    = Field(default=48, gt=0)
    level_edges           : Tuple[float, float]    = Field(default=(32.0, 64.0),
                                                           description="P3=(0,e0], P4=(e0,e1], P5=(e1,inf)")
    depth_init            : float                  = Field(default=15.0, gt=0, description="initial depth output, meters")
    seed                  : int                    = Field(default=0)

    @field_validator("encoder_channels")
    @classmethod
    def _six_levels(cls, v):
        if len(v) != len(ENCODER_LEVELS) or any(c <= 0 for c in v):
            raise ValueError(f"encoder_channels needs {len(ENCODER_LEVELS)} positive widths (E2..E7), got {v}")
        return v

    @field_validator("level_edges")
    @classmethod
    def _edges_increasing(cls, v):
        if not 0 < v[0] < v[1]:
            raise ValueError(f"level_edges must satisfy 0 < e0 < e1, got {v}")
        return v

    @property
    def num_classes(self) -> int:
        return self.num_stuff_classes + self.num_thing_classes

    @property
    def level_ranges(self) -> List[Tuple[float, float]]:
        e0, e1 = self.level_edges
        return [(0.0, e0), (e0, e1), (e1, float("inf"))]

    def encoder_width(self, level: int) -> int:
        return self.encoder_channels[ENCODER_LEVELS.index(level)]


def stride_of(level: int) -> int:
    return 2 ** level
