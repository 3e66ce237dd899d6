"""
On-disk scene datasets.

  <root>/manifest.json      format version, SceneSpec echo, sample ids
  <root>/images/<id>.png    RGB, 8-bit
  <root>/seg/<id>.png       single channel class indices
  <root>/depth/<id>.raw     UDPT float grid (see scenegen.gridio)
  <root>/ann/<id>.json      instances: class, box, median depth, RLE mask
"""
import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterator, List, Union

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field, PrivateAttr, ValidationError

from scenegen.errors import (
    CorruptFileError,
    DatasetError,
    InvariantViolationError,
    ManifestVersionError,
    MissingFileError,
    SampleNotFoundError,
)
from scenegen.generator import generate_scene
from scenegen.gridio import DEPTH_MAGIC, read_grid, write_grid
from scenegen.spec import InstanceAnnotation, Sample, SceneSpec, validate_sample

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1"
MANIFEST_NAME  = "manifest.json"
SUBDIRS        = ("images", "seg", "depth", "ann")


class DatasetManifest(BaseModel):
    format_version : str       = Field(default=FORMAT_VERSION)
    spec           : SceneSpec
    sample_ids     : List[str] = Field(default_factory=list)

    _root: Path = PrivateAttr(default=Path("."))

    @property
    def root(self) -> Path:
        return self._root

    def path_for(self, kind: str, sample_id: str) -> Path:
        suffix = {"images": ".png", "seg": ".png", "depth": ".raw", "ann": ".json"}[kind]
        return self._root / kind / f"{sample_id}{suffix}"

    def __len__(self) -> int:
        return len(self.sample_ids)

    def samples(self) -> Iterator[Sample]:
        for sid in self.sample_ids:
            yield load_sample(self, sid)


# ── Mask run-length encoding ──────────────────────────────────────

def encode_rle(mask: np.ndarray) -> dict:
    flat   = mask.reshape(-1).astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0] == 1:
        counts = [0] + counts
    return {"size": list(mask.shape), "counts": counts}


def decode_rle(rle: dict) -> np.ndarray:
    h, w   = rle["size"]
    counts = np.asarray(rle["counts"], dtype=np.int64)
    if counts.sum() != h * w:
        raise CorruptFileError(f"RLE counts sum to {counts.sum()}, expected {h * w}")
    values = np.arange(counts.size) % 2
    return np.repeat(values, counts).astype(bool).reshape(h, w)


# ── Writing ───────────────────────────────────────────────────────

def _write_sample(manifest: DatasetManifest, sample: Sample) -> List[Path]:
    sid     = sample.sample_id
    written = []

    img_path = manifest.path_for("images", sid)
    Image.fromarray(np.round(sample.image * 255).astype(np.uint8)).save(img_path)
    written.append(img_path)

    seg_path = manifest.path_for("seg", sid)
    Image.fromarray(sample.seg_gt.astype(np.uint8)).save(seg_path)
    written.append(seg_path)

    depth_path = manifest.path_for("depth", sid)
    write_grid(depth_path, sample.depth_gt, DEPTH_MAGIC)
    written.append(depth_path)

    ann_path = manifest.path_for("ann", sid)
    ann = {
        "sample_id": sid,
        "instances": [
            {
                "class_id"    : inst.class_id,
                "box"         : list(inst.box),
                "median_depth": inst.median_depth,
                "mask_rle"    : encode_rle(inst.mask),
            }
            for inst in sample.instances
        ],
    }
    ann_path.write_text(json.dumps(ann))
    written.append(ann_path)
    return written


def save_manifest(manifest: DatasetManifest) -> Path:
    path = manifest.root / MANIFEST_NAME
    path.write_text(manifest.model_dump_json(indent=2))
    return path


def render_dataset(spec: SceneSpec, count: int, out_dir: Union[str, Path], jobs: int = 1) -> DatasetManifest:
    """Generate `count` scenes and write them under out_dir."""
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    out_dir   = Path(out_dir)
    preexists = out_dir.exists()
    manifest  = DatasetManifest(spec=spec, sample_ids=[f"{i:06d}" for i in range(count)])
    manifest._root = out_dir
    written: List[Path] = []

    def _one(index: int) -> List[Path]:
        return _write_sample(manifest, generate_scene(spec, index))

    try:
        for sub in SUBDIRS:
            (out_dir / sub).mkdir(parents=True, exist_ok=True)
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                for paths in pool.map(_one, range(count)):
                    written.extend(paths)
        else:
            for index in range(count):
                written.extend(_one(index))
        written.append(save_manifest(manifest))
    except OSError as e:
        logger.error("[SceneGen] write failed under %s: %s; cleaning up", out_dir, e)
        if not preexists:
            shutil.rmtree(out_dir, ignore_errors=True)
        else:
            for p in written:
                p.unlink(missing_ok=True)
        raise DatasetError(f"failed to render dataset into {out_dir}: {e}") from e

    logger.info("[SceneGen] wrote %d samples to %s", count, out_dir)
    return manifest


# ── Reading ───────────────────────────────────────────────────────

def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CorruptFileError(f"{path}: not valid JSON ({e})") from e
    version = str(raw.get("format_version", "<missing>"))
    if version != FORMAT_VERSION:
        raise ManifestVersionError(version, FORMAT_VERSION)
    try:
        manifest = DatasetManifest.model_validate(raw)
    except ValidationError as e:
        raise CorruptFileError(f"{path}: manifest does not validate: {e}") from e
    manifest._root = path.parent
    return manifest


def _read_png(path: Path) -> np.ndarray:
    if not path.exists():
        raise MissingFileError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            return np.asarray(im)
    except OSError as e:
        raise CorruptFileError(f"{path}: unreadable PNG ({e})") from e


def load_sample(manifest: DatasetManifest, sample_id: str) -> Sample:
    if sample_id not in manifest.sample_ids:
        raise SampleNotFoundError(sample_id)

    image = _read_png(manifest.path_for("images", sample_id)).astype(np.float32) / 255.0
    seg   = _read_png(manifest.path_for("seg", sample_id)).astype(np.uint8)
    depth = read_grid(manifest.path_for("depth", sample_id), DEPTH_MAGIC)

    ann_path = manifest.path_for("ann", sample_id)
    if not ann_path.exists():
        raise MissingFileError(f"annotation not found: {ann_path}")
    try:
        ann = json.loads(ann_path.read_text())
        instances = [
            InstanceAnnotation(
                class_id     = int(a["class_id"]),
                box          = tuple(int(v) for v in a["box"]),
                mask         = decode_rle(a["mask_rle"]),
                median_depth = float(a["median_depth"]),
            )
            for a in ann["instances"]
        ]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CorruptFileError(f"{ann_path}: malformed annotation ({e})") from e

    sample = Sample(image=image, seg_gt=seg, depth_gt=depth, instances=instances, sample_id=sample_id)
    validate_sample(sample, manifest.spec)
    return sample


def class_frequencies(manifest: DatasetManifest) -> np.ndarray:
    """Pixel frequency of every seg class over the whole split."""
    counts = np.zeros(manifest.spec.num_classes, dtype=np.float64)
    for sid in manifest.sample_ids:
        seg = _read_png(manifest.path_for("seg", sid))
        counts += np.bincount(seg.reshape(-1), minlength=counts.size)[: counts.size]
    total = counts.sum()
    return counts / total if total > 0 else counts


__all__ = [
    "DatasetManifest",
    "render_dataset",
    "load_manifest",
    "load_sample",
    "class_frequencies",
    "InvariantViolationError",
]
