"""
PCA mask codec.

Instance masks are cropped to their box, resized to m x m, flattened and
projected onto the top-k principal components of the training masks. The
predicted k-vector is decoded back by the transpose projection, a bilinear
resize to the box, and a threshold.
"""
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

BASIS_MAGIC   = b"UPCA"
BASIS_VERSION = 1

Box = Tuple[int, int, int, int]


class MaskCodecError(Exception):
    pass


@dataclass(frozen=True)
class PCABasis:
    mask_side  : int
    mean       : np.ndarray     # float32, m*m
    components : np.ndarray     # float32, k x m*m, orthonormal rows
    explained_variance : np.ndarray = None
    version    : int = BASIS_VERSION

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def save(self, path: Union[str, Path]) -> None:
        m, k = self.mask_side, self.k
        with open(path, "wb") as f:
            f.write(BASIS_MAGIC + struct.pack("<3I", self.version, m, k))
            f.write(np.ascontiguousarray(self.mean, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(self.components, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PCABasis":
        data = Path(path).read_bytes()
        if len(data) < 16 or data[:4] != BASIS_MAGIC:
            raise MaskCodecError(f"{path}: not a PCA basis file")
        version, m, k = struct.unpack("<3I", data[4:16])
        if version != BASIS_VERSION:
            raise MaskCodecError(f"{path}: basis version {version} unsupported (expected {BASIS_VERSION})")
        n = m * m
        if len(data) != 16 + 4 * (n + k * n):
            raise MaskCodecError(f"{path}: truncated basis payload")
        body = np.frombuffer(data[16:], dtype="<f4")
        mean = body[:n].astype(np.float32)
        comp = body[n:].reshape(k, n).astype(np.float32)
        return cls(mask_side=m, mean=mean, components=comp, version=version)


# ── Resizing ──────────────────────────────────────────────────────

def crop(mask: np.ndarray, box: Box) -> np.ndarray:
    x0, y0, x1, y1 = box
    return mask[y0:y1, x0:x1]


def resize_nearest(grid: np.ndarray, m: int) -> np.ndarray:
    h, w = grid.shape
    rows = np.minimum(((np.arange(m) + 0.5) * h / m).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(m) + 0.5) * w / m).astype(np.int64), w - 1)
    return grid[rows][:, cols]


def resize_bilinear(grid: torch.Tensor, height: int, width: int) -> torch.Tensor:
    if grid.shape[-2:] == (height, width):
        return grid
    out = F.interpolate(grid[None, None], size=(height, width), mode="bilinear", align_corners=False)
    return out[0, 0]


def mask_to_vector(mask: np.ndarray, box: Box, m: int) -> np.ndarray:
    patch = crop(mask, box)
    if patch.size == 0 or not patch.any():
        raise MaskCodecError(f"empty mask crop for box {box}")
    return resize_nearest(patch.astype(np.float64), m).reshape(-1)


# ── Fitting ───────────────────────────────────────────────────────

def fit_pca(training_masks: Iterable[Tuple[np.ndarray, Box]], m: int = 16, k: int = 32) -> PCABasis:
    """Fit the top-k components of the (mask, box) pairs."""
    vectors = [mask_to_vector(mask, box, m) for mask, box in training_masks]
    if k < 1 or k > m * m:
        raise MaskCodecError(f"k must lie in [1, {m * m}], got {k}")
    if len(vectors) < k:
        raise MaskCodecError(f"need at least k={k} training masks, got {len(vectors)}")

    X    = np.stack(vectors)
    mean = X.mean(axis=0)
    # full_matrices gives an orthonormal completion when the data rank is below k
    _, s, vt = np.linalg.svd(X - mean, full_matrices=True)
    comps = vt[:k].copy()
    for row in comps:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1
    var = np.zeros(k)
    var[: min(k, s.size)] = (s[:k] ** 2) / max(len(vectors) - 1, 1)
    return PCABasis(
        mask_side          = m,
        mean               = mean.astype(np.float32),
        components         = comps.astype(np.float32),
        explained_variance = var,
    )


# ── Encoding / decoding ───────────────────────────────────────────

def encode_grid(grid: np.ndarray, basis: PCABasis) -> np.ndarray:
    """Project an m x m real-valued grid."""
    flat = np.asarray(grid, dtype=np.float64).reshape(-1)
    return basis.components.astype(np.float64) @ (flat - basis.mean.astype(np.float64))


def encode_mask(mask: np.ndarray, box: Box, basis: PCABasis) -> np.ndarray:
    return encode_grid(mask_to_vector(mask, box, basis.mask_side), basis)


def reconstruct_grid(code: Union[np.ndarray, torch.Tensor], basis: PCABasis) -> torch.Tensor:
    code  = torch.as_tensor(code, dtype=torch.float64)
    comps = torch.from_numpy(basis.components).to(torch.float64)
    mean  = torch.from_numpy(basis.mean).to(torch.float64)
    m     = basis.mask_side
    return (code @ comps + mean).reshape(m, m)


def decode_mask(code: Union[np.ndarray, torch.Tensor], box: Box, basis: PCABasis, threshold: float = 0.5) -> np.ndarray:
    """Binary mask of the box's size (height x width)."""
    x0, y0, x1, y1 = box
    h, w = max(int(y1 - y0), 1), max(int(x1 - x0), 1)
    grid = resize_bilinear(reconstruct_grid(code, basis), h, w)
    return (grid >= threshold).cpu().numpy()


def paste_mask(patch: np.ndarray, box: Box, image_shape: Sequence[int]) -> np.ndarray:
    """Place a box-sized patch into a full-image boolean mask, clipping at the borders."""
    H, W = image_shape
    full = np.zeros((H, W), dtype=bool)
    x0, y0 = int(box[0]), int(box[1])
    h, w   = patch.shape
    ys0, xs0 = max(y0, 0), max(x0, 0)
    ys1, xs1 = min(y0 + h, H), min(x0 + w, W)
    if ys1 > ys0 and xs1 > xs0:
        full[ys0:ys1, xs0:xs1] = patch[ys0 - y0: ys1 - y0, xs0 - x0: xs1 - x0]
    return full
