"""
On-disk attack artefacts: the adversarial image as an 8-bit PNG (quantised,
so re-loading it does not reproduce the float perturbation exactly), the
perturbation as a UPRT float32 grid, and the objective trace as CSV.
"""
import csv
from pathlib import Path
from typing import Dict, Union

import numpy as np
from PIL import Image

from attacks.config import AttackOutcome
from scenegen.gridio import PERTURBATION_MAGIC, read_grid, write_grid


def save_outcome(outcome: AttackOutcome, out_dir: Union[str, Path], stem: str) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "image"       : out_dir / f"{stem}_adv.png",
        "perturbation": out_dir / f"{stem}_delta.raw",
        "trace"       : out_dir / f"{stem}_trace.csv",
    }
    Image.fromarray(np.round(outcome.adversarial_hwc() * 255).astype(np.uint8)).save(paths["image"])

    delta = outcome.perturbation[0].permute(1, 2, 0).detach().cpu().numpy()
    write_grid(paths["perturbation"], delta, PERTURBATION_MAGIC)

    with open(paths["trace"], "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "objective"])
        for i, value in enumerate(outcome.trace):
            writer.writerow([i, repr(float(value))])
    return paths


def load_perturbation(path: Union[str, Path]) -> np.ndarray:
    """H x W x 3 float32 perturbation on the [0, 1] scale."""
    return read_grid(path, PERTURBATION_MAGIC)


def load_trace(path: Union[str, Path]):
    with open(path, newline="") as f:
        return [float(row["objective"]) for row in csv.DictReader(f)]
