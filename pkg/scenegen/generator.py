"""
Procedural scene generator.

Each scene is a two-region background (a far upper region and a ground plane
whose depth ramps from far at the horizon to near at the bottom row) with
axis-aligned ellipse / rectangle objects standing on the ground. Objects are
drawn at a sampled depth with apparent size base_size * near / depth and
composited far-to-near, so the nearest object owns every overlap pixel.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from scenegen.spec import (
    InstanceAnnotation,
    Sample,
    SceneSpec,
    mask_median_depth,
    tight_box,
)

logger = logging.getLogger(__name__)

SKY_TOP_RGB      = np.array([0.52, 0.68, 0.90], dtype=np.float32)
SKY_HORIZON_RGB  = np.array([0.78, 0.86, 0.95], dtype=np.float32)
GROUND_FAR_RGB   = np.array([0.46, 0.46, 0.43], dtype=np.float32)
GROUND_NEAR_RGB  = np.array([0.26, 0.25, 0.24], dtype=np.float32)


@dataclass
class _Placement:
    class_id : int
    depth    : float
    mask     : np.ndarray
    color    : np.ndarray


def scene_rng(spec: SceneSpec, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed % (1 << 64), index]))


def _background_depth(spec: SceneSpec, horizon: int) -> np.ndarray:
    h, w      = spec.image_height, spec.image_width
    near, far = spec.depth_range
    rows      = np.arange(h, dtype=np.float64)
    span      = max(h - 1 - horizon, 1)
    ramp      = far + (near - far) * np.clip((rows - horizon) / span, 0.0, 1.0)
    depth_col = np.where(rows < horizon, far, ramp)
    return np.repeat(depth_col[:, None], w, axis=1).astype(np.float32)


def _contact_row(spec: SceneSpec, horizon: int, depth: float) -> float:
    near, far = spec.depth_range
    t = (far - depth) / (far - near)
    return horizon + t * (spec.image_height - 1 - horizon)


def _draw_shape(spec: SceneSpec, shape: str, cx: float, cy: float, w: float, h: float) -> np.ndarray:
    ys = np.arange(spec.image_height, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(spec.image_width, dtype=np.float64)[None, :] + 0.5
    if shape == "ellipse":
        return ((xs - cx) / (w / 2)) ** 2 + ((ys - cy) / (h / 2)) ** 2 <= 1.0
    return (np.abs(xs - cx) <= w / 2) & (np.abs(ys - cy) <= h / 2)


def _sample_placement(spec: SceneSpec, rng: np.random.Generator, horizon: int) -> Optional[_Placement]:
    class_id = int(rng.integers(spec.num_things))
    thing    = spec.thing_classes[class_id]
    near, _  = spec.depth_range
    depth    = float(rng.uniform(*spec.instance_depth_range))
    size     = float(rng.uniform(*thing.size_range)) * near / depth
    aspect   = float(np.clip(rng.normal(thing.aspect_mean, thing.aspect_spread), 0.2, 5.0))
    w, h     = size * np.sqrt(aspect), size / np.sqrt(aspect)
    cx       = float(rng.uniform(0, spec.image_width))
    bottom   = _contact_row(spec, horizon, depth) + float(rng.uniform(-2, 2))
    mask     = _draw_shape(spec, thing.shape, cx, bottom - h / 2, w, h)
    color    = np.clip(np.asarray(thing.color, dtype=np.float32) + rng.normal(0, 0.04, 3).astype(np.float32), 0, 1)
    # depth is quantised to float32 up front so annotations and depth_gt agree exactly
    return _Placement(class_id=class_id, depth=float(np.float32(depth)), mask=mask, color=color)


def _composite_owner(spec: SceneSpec, placements: List[_Placement]) -> np.ndarray:
    owner = np.full((spec.image_height, spec.image_width), -1, dtype=np.int32)
    order = sorted(range(len(placements)), key=lambda i: (-placements[i].depth, i))
    for i in order:
        owner[placements[i].mask] = i
    return owner


def _all_visible(spec: SceneSpec, placements: List[_Placement], owner: np.ndarray) -> bool:
    for i in range(len(placements)):
        visible = owner == i
        if int(visible.sum()) < spec.min_visible_pixels:
            return False
        x0, y0, x1, y1 = tight_box(visible)
        if min(x1 - x0, y1 - y0) < spec.min_box_side:
            return False
    return True


def _place_instances(spec: SceneSpec, rng: np.random.Generator, horizon: int, count: int) -> List[_Placement]:
    accepted: List[_Placement] = []
    for _ in range(count):
        for _attempt in range(spec.max_placement_attempts):
            cand  = _sample_placement(spec, rng, horizon)
            trial = accepted + [cand]
            if _all_visible(spec, trial, _composite_owner(spec, trial)):
                accepted = trial
                break
        else:
            logger.debug("[SceneGen] could not place instance %d of %d, reducing count", len(accepted) + 1, count)
    return accepted


def _render_image(spec: SceneSpec, rng: np.random.Generator, horizon: int, depth: np.ndarray,
                  owner: np.ndarray, placements: List[_Placement]) -> np.ndarray:
    h, w      = spec.image_height, spec.image_width
    near, far = spec.depth_range
    rows      = np.arange(h, dtype=np.float32)[:, None, None]

    sky_t   = np.clip(rows / max(horizon, 1), 0, 1)
    sky     = SKY_TOP_RGB * (1 - sky_t) + SKY_HORIZON_RGB * sky_t
    ground_t = ((far - depth) / (far - near))[:, :, None]
    ground  = GROUND_FAR_RGB * (1 - ground_t) + GROUND_NEAR_RGB * ground_t
    # stripes whose spacing follows the ground depth give a monocular depth cue
    stripes = 0.04 * np.sin(40.0 / np.maximum(depth, 1e-3))[:, :, None]
    image   = np.where(rows < horizon, sky, ground + stripes).astype(np.float32)
    image   = np.broadcast_to(image, (h, w, 3)).copy()

    for i, p in enumerate(placements):
        visible = owner == i
        if not visible.any():
            continue
        ys, _   = np.nonzero(p.mask)
        top, bottom = ys.min(), ys.max() + 1
        shade   = 1.1 - 0.25 * (np.arange(h, dtype=np.float32) - top) / max(bottom - top, 1)
        fog     = 0.5 * p.depth / far
        color   = (p.color[None, :] * shade[:, None]) * (1 - fog) + SKY_HORIZON_RGB[None, :] * fog
        image[visible] = np.broadcast_to(color[:, None, :], (h, w, 3))[visible]

    if spec.noise_std > 0:
        image += rng.normal(0, spec.noise_std, image.shape).astype(np.float32)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def generate_scene(spec: SceneSpec, index: int) -> Sample:
    """Deterministic scene for (spec.seed, index)."""
    if index < 0:
        raise ValueError(f"scene index must be >= 0, got {index}")

    rng     = scene_rng(spec, index)
    horizon = int(spec.image_height * rng.uniform(*spec.horizon_range))
    count   = int(rng.integers(spec.instance_count_range[0], spec.instance_count_range[1] + 1))

    depth      = _background_depth(spec, horizon)
    seg        = np.where(np.arange(spec.image_height)[:, None] < horizon, 0, 1).astype(np.uint8)
    seg        = np.repeat(seg, spec.image_width, axis=1)
    placements = _place_instances(spec, rng, horizon, count)
    owner      = _composite_owner(spec, placements)

    instances: List[InstanceAnnotation] = []
    for i, p in enumerate(placements):
        visible        = owner == i
        seg[visible]   = spec.seg_class_of_thing(p.class_id)
        depth[visible] = p.depth
    for i, p in enumerate(placements):
        visible = owner == i
        instances.append(InstanceAnnotation(
            class_id     = p.class_id,
            box          = tight_box(visible),
            mask         = visible,
            median_depth = mask_median_depth(visible, depth),
        ))

    image = _render_image(spec, rng, horizon, depth, owner, placements)
    return Sample(image=image, seg_gt=seg, depth_gt=depth, instances=instances, sample_id=f"{index:06d}")
