from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from losses.targets import DenseTargets, assign_targets, collate_targets
from maskcodec import PCABasis
from scenegen.dataset import DatasetManifest, load_sample
from scenegen.spec import Sample
from uninet.config import ModelConfig


@dataclass
class Batch:
    images     : torch.Tensor          # N x 3 x H x W float32
    targets    : DenseTargets
    sample_ids : List[str]


class SceneDataset(Dataset):
    """Samples of a rendered split with their dense training targets."""

    def __init__(self, manifest: DatasetManifest, config: ModelConfig, basis: Optional[PCABasis] = None,
                 sample_ids: Optional[Sequence[str]] = None):
        self.manifest   = manifest
        self.config     = config
        self.basis      = basis
        self.sample_ids = list(sample_ids) if sample_ids is not None else list(manifest.sample_ids)

    def __len__(self) -> int:
        return len(self.sample_ids)

    def sample(self, index: int) -> Sample:
        return load_sample(self.manifest, self.sample_ids[index])

    def __getitem__(self, index: int):
        sample = self.sample(index)
        image  = torch.from_numpy(np.ascontiguousarray(sample.image)).permute(2, 0, 1).float()
        return image, assign_targets(sample, self.config, self.basis), sample.sample_id


def collate_batch(items) -> Batch:
    images, targets, ids = zip(*items)
    return Batch(images=torch.stack(images), targets=collate_targets(targets), sample_ids=list(ids))


def make_loader(dataset: SceneDataset, batch_size: int, shuffle: bool, seed: int, workers: int = 0) -> DataLoader:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(
        dataset,
        batch_size  = batch_size,
        shuffle     = shuffle,
        num_workers = workers,
        collate_fn  = collate_batch,
        generator   = generator,
    )
