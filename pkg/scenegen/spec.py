"""
Scene description types.

SceneSpec is the full, serialisable recipe for a synthetic dataset: every
generator constant lives here so the manifest echo is enough to regenerate
the data bit for bit.

Class indexing used everywhere in the repo:
  seg_gt values      0 .. S-1         stuff classes (in SceneSpec order)
                     S .. S+T-1       thing classes (S + thing class id)
  InstanceAnnotation.class_id         0 .. T-1, indexes thing_classes
"""
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from scenegen.errors import InvariantViolationError

SCHEMA_VERSION  = "1"
MAX_STRIDE      = 128
EVAL_DEPTH_MIN  = 1e-3
EVAL_DEPTH_MAX  = 80.0


class ThingClassSpec(BaseModel):
    name          : str                         = Field(description="class name, e.g. person or car")
    aspect_mean   : float                       = Field(gt=0, description="mean box aspect ratio (width / height)")
    aspect_spread : float                       = Field(ge=0, description="std-dev of the aspect ratio")
    size_range    : Tuple[float, float]         = Field(description="base size sqrt(w*h) in pixels at the near depth")
    shape         : Literal["ellipse", "rect"]  = Field(default="ellipse")
    color         : Tuple[float, float, float]  = Field(description="mean RGB colour in [0, 1]")

    @field_validator("size_range")
    @classmethod
    def _size_range_ordered(cls, v):
        if not 0 < v[0] <= v[1]:
            raise ValueError(f"size_range must satisfy 0 < min <= max, got {v}")
        return v


def default_thing_classes() -> List[ThingClassSpec]:
    return [
        ThingClassSpec(name="person", aspect_mean=0.45, aspect_spread=0.06, size_range=(70.0, 100.0),
                       shape="ellipse", color=(0.72, 0.30, 0.32)),
        ThingClassSpec(name="car",    aspect_mean=2.0,  aspect_spread=0.25, size_range=(90.0, 130.0),
                       shape="rect",    color=(0.28, 0.36, 0.70)),
        ThingClassSpec(name="truck",  aspect_mean=1.3,  aspect_spread=0.15, size_range=(120.0, 160.0),
                       shape="rect",    color=(0.58, 0.52, 0.30)),
    ]


class SceneSpec(BaseModel):
    schema_version         : str                   = Field(default=SCHEMA_VERSION)
    image_height           : int                   = Field(default=128, gt=0)
    image_width            : int                   = Field(default=256, gt=0)
    stuff_classes          : List[str]             = Field(default_factory=lambda: ["sky", "ground"])
    thing_classes          : List[ThingClassSpec]  = Field(default_factory=default_thing_classes)
    instance_count_range   : Tuple[int, int]       = Field(default=(2, 6))
    depth_range            : Tuple[float, float]   = Field(default=(2.0, 60.0), description="[near, far] meters")
    instance_depth_range   : Tuple[float, float]   = Field(default=(3.0, 20.0), description="depths objects are placed at")
    horizon_range          : Tuple[float, float]   = Field(default=(0.35, 0.5), description="horizon row as image fraction")
    min_visible_pixels     : int                   = Field(default=40, ge=1)
    min_box_side           : int                   = Field(default=6, ge=1)
    max_placement_attempts : int                   = Field(default=12, ge=1)
    noise_std              : float                 = Field(default=0.02, ge=0)
    seed                   : int                   = Field(default=0)

    @field_validator("stuff_classes")
    @classmethod
    def _two_stuff_regions(cls, v):
        if len(v) != 2:
            raise ValueError("stuff_classes must name exactly two regions (upper far region, lower ground ramp)")
        return v

    @model_validator(mode="after")
    def _check_invariants(self):
        if self.image_height % MAX_STRIDE or self.image_width % MAX_STRIDE:
            raise ValueError(f"image size {self.image_height}x{self.image_width} must be divisible by {MAX_STRIDE}")
        near, far = self.depth_range
        if not (near > EVAL_DEPTH_MIN and far <= EVAL_DEPTH_MAX and near < far):
            raise ValueError(f"depth_range must satisfy {EVAL_DEPTH_MIN} < near < far <= {EVAL_DEPTH_MAX}, got {self.depth_range}")
        lo, hi = self.instance_depth_range
        if not (near <= lo <= hi <= far):
            raise ValueError("instance_depth_range must lie inside depth_range")
        cmin, cmax = self.instance_count_range
        if not 0 <= cmin <= cmax:
            raise ValueError(f"instance_count_range must satisfy 0 <= min <= max, got {self.instance_count_range}")
        means = [t.aspect_mean for t in self.thing_classes]
        if not (any(m < 1 for m in means) and any(m > 1 for m in means)):
            raise ValueError("thing classes need at least one aspect mean < 1 and one > 1")
        if self.num_classes > 255:
            raise ValueError("at most 255 classes fit an 8-bit segmentation PNG")
        return self

    @property
    def num_stuff(self) -> int:
        return len(self.stuff_classes)

    @property
    def num_things(self) -> int:
        return len(self.thing_classes)

    @property
    def num_classes(self) -> int:
        return self.num_stuff + self.num_things

    @property
    def class_names(self) -> List[str]:
        return list(self.stuff_classes) + [t.name for t in self.thing_classes]

    def thing_id(self, name: str) -> int:
        for i, t in enumerate(self.thing_classes):
            if t.name == name:
                return i
        raise KeyError(f"unknown thing class {name!r}; known: {[t.name for t in self.thing_classes]}")

    def seg_class_of_thing(self, thing_id: int) -> int:
        return self.num_stuff + thing_id


@dataclass
class InstanceAnnotation:
    class_id     : int
    box          : Tuple[int, int, int, int]   # x_min, y_min, x_max, y_max; max is exclusive
    mask         : np.ndarray                  # bool, H x W
    median_depth : float

    @property
    def width(self) -> int:
        return self.box[2] - self.box[0]

    @property
    def height(self) -> int:
        return self.box[3] - self.box[1]


@dataclass
class Sample:
    image     : np.ndarray                      # float32, H x W x 3, [0, 1]
    seg_gt    : np.ndarray                      # uint8,   H x W
    depth_gt  : np.ndarray                      # float32, H x W, meters
    instances : List[InstanceAnnotation] = field(default_factory=list)
    sample_id : str = ""


def tight_box(mask: np.ndarray) -> Optional[Tuple[int, int, int, int]]:
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def mask_median_depth(mask: np.ndarray, depth: np.ndarray) -> float:
    return float(np.median(depth[mask]))


def validate_sample(sample: Sample, spec: Optional[SceneSpec] = None) -> None:
    """Raise InvariantViolationError if any Sample invariant is broken."""
    h, w = sample.seg_gt.shape
    if sample.image.shape != (h, w, 3) or sample.depth_gt.shape != (h, w):
        raise InvariantViolationError(f"{sample.sample_id}: image/seg/depth shapes disagree")
    if sample.image.min() < 0 or sample.image.max() > 1:
        raise InvariantViolationError(f"{sample.sample_id}: image values outside [0, 1]")
    if not np.all(np.isfinite(sample.depth_gt)):
        raise InvariantViolationError(f"{sample.sample_id}: non-finite depth")

    if spec is not None:
        near, far = spec.depth_range
        if sample.depth_gt.min() < near - 1e-4 or sample.depth_gt.max() > far + 1e-4:
            raise InvariantViolationError(f"{sample.sample_id}: depth outside [{near}, {far}]")
        if int(sample.seg_gt.max()) >= spec.num_classes:
            raise InvariantViolationError(f"{sample.sample_id}: seg class index out of range")
        num_stuff = spec.num_stuff
    else:
        num_stuff = None

    for i, inst in enumerate(sample.instances):
        box = tight_box(inst.mask)
        if box is None:
            raise InvariantViolationError(f"{sample.sample_id}: instance {i} has an empty mask")
        if tuple(inst.box) != box:
            raise InvariantViolationError(
                f"{sample.sample_id}: instance {i} box {tuple(inst.box)} is not the tight box {box} of its mask"
            )
        if num_stuff is not None:
            if not 0 <= inst.class_id < spec.num_things:
                raise InvariantViolationError(f"{sample.sample_id}: instance {i} class {inst.class_id} out of range")
            if np.any(sample.seg_gt[inst.mask] != num_stuff + inst.class_id):
                raise InvariantViolationError(f"{sample.sample_id}: instance {i} mask disagrees with seg_gt")
        median = mask_median_depth(inst.mask, sample.depth_gt)
        if median != inst.median_depth:
            raise InvariantViolationError(
                f"{sample.sample_id}: instance {i} median depth {inst.median_depth} != {median} recomputed from depth_gt"
            )
