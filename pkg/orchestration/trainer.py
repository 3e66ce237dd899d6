"""
Trainer: minimises the geometric-mean MTL loss over the active losses of a
task subset with Adam and a stepwise learning-rate schedule, then writes the
checkpoint, the mask-codec basis and the per-epoch loss curve.

Outputs in RunConfig.out_dir:
  model.pt          checkpoint (model config, task mask, parameters, extras)
  basis.upca        PCA mask basis (instance segmentation only)
  loss_curve.csv    epoch, lr, mtl and every active loss, NA for inactive ones
  run_config.json   the RunConfig echo
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import torch
from tqdm import tqdm

from evaluation.mlflow_tracker import ExperimentTracker
from losses.bundle import LOSS_NAMES, active_losses, compute_losses, mtl_loss
from losses.targets import to_device
from losses.task_losses import seg_class_weights
from maskcodec import MaskCodecError, PCABasis, fit_pca
from observability.prometheus_metrics import metrics
from orchestration.data import SceneDataset, make_loader
from orchestration.state import NonFiniteLossError, RunConfig, RunnerError
from scenegen.dataset import DatasetManifest, class_frequencies, load_manifest, load_sample
from uninet.checkpoint import save_checkpoint
from uninet.config import ModelConfig, Task, format_tasks
from uninet.network import UniNet

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.pt"
BASIS_NAME      = "basis.upca"
CURVE_NAME      = "loss_curve.csv"
CONFIG_NAME     = "run_config.json"


@dataclass
class TrainResult:
    checkpoint : Path
    curve      : List[Dict[str, Optional[float]]] = field(default_factory=list)
    basis      : Optional[Path] = None


def model_config_for(manifest: DatasetManifest, base: ModelConfig) -> ModelConfig:
    """The model config with class counts taken from the dataset."""
    return base.model_copy(update={
        "num_stuff_classes": manifest.spec.num_stuff,
        "num_thing_classes": manifest.spec.num_things,
    })


def fit_basis_from_manifest(manifest: DatasetManifest, m: int, k: int) -> PCABasis:
    pairs = []
    for sid in manifest.sample_ids:
        sample = load_sample(manifest, sid)
        pairs.extend((inst.mask, inst.box) for inst in sample.instances)
    try:
        return fit_pca(pairs, m=m, k=k)
    except MaskCodecError as e:
        raise RunnerError(f"cannot fit the mask basis on {manifest.root}: {e}") from e


def write_curve(path: Path, curve: List[Dict[str, Optional[float]]]) -> Path:
    columns = ["epoch", "lr", "mtl", *LOSS_NAMES]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in curve:
            writer.writerow({c: ("NA" if row.get(c) is None else repr(row[c])) for c in columns})
    return path


class Trainer:
    """
    Trains `model` (built from the config when not given) on the config's
    task mask. A model built for more tasks than the mask keeps every
    parameter outside the mask untouched.
    """

    def __init__(self, config: RunConfig, model: Optional[UniNet] = None,
                 tracker: Optional[ExperimentTracker] = None, progress: bool = True):
        self.config   = config
        self.tracker  = tracker or ExperimentTracker()
        self.progress = progress
        self.out_dir  = Path(config.out_dir)
        self.manifest = load_manifest(config.train_manifest)
        self.mask     = config.task_mask
        self.active   = active_losses(self.mask)

        torch.manual_seed(config.seed)
        model_cfg  = model_config_for(self.manifest, config.model)
        self.model = model if model is not None else UniNet(model_cfg, tasks=self.mask)
        self.model.resolve_mask(self.mask)

        self.basis = None
        if Task.IS in self.mask:
            self.basis = fit_basis_from_manifest(self.manifest, config.mask_side, self.model.config.mask_code_dim)
        self.class_weights = seg_class_weights(class_frequencies(self.manifest)) if Task.SS in self.mask else None

    def _check_finite(self, terms: Dict[str, torch.Tensor], sample_ids: List[str]) -> None:
        for name, value in terms.items():
            if not torch.isfinite(value.detach()).all():
                raise NonFiniteLossError(name, sample_ids, float(value.detach()))

    def train(self) -> TrainResult:
        cfg = self.config
        self.out_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(self.out_dir / CONFIG_NAME)

        dataset   = SceneDataset(self.manifest, self.model.config, self.basis)
        loader    = make_loader(dataset, cfg.batch_size, shuffle=True, seed=cfg.seed, workers=cfg.workers)
        params    = self.model.parameters_for(self.mask)
        optimizer = torch.optim.Adam(params, lr=cfg.lr)
        scheduler = torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=cfg.milestone_epochs(), gamma=cfg.lr_decay)
        tasks_tag = format_tasks(self.mask)

        self.tracker.start_run(f"train-{tasks_tag}", {
            "tasks": tasks_tag, "epochs": cfg.epochs, "lr": cfg.lr, "batch_size": cfg.batch_size, "seed": cfg.seed,
        })
        logger.info("[Trainer] tasks=%s samples=%d epochs=%d params=%d",
                    tasks_tag, len(dataset), cfg.epochs, sum(p.numel() for p in params))

        curve: List[Dict[str, Optional[float]]] = []
        self.model.train()
        try:
            for epoch in range(cfg.epochs):
                sums = {n: 0.0 for n in ("mtl", *self.active)}
                steps = 0
                lr = optimizer.param_groups[0]["lr"]
                batches = tqdm(loader, desc=f"epoch {epoch + 1}/{cfg.epochs}", leave=False, disable=not self.progress)
                for batch in batches:
                    outputs = self.model(batch.images, task_mask=self.mask)
                    bundle  = compute_losses(outputs, to_device(batch.targets, batch.images.device),
                                             self.active, self.class_weights)
                    self._check_finite(bundle.terms, batch.sample_ids)
                    loss = mtl_loss(bundle, cfg.weights, self.active)
                    self._check_finite({"mtl": loss}, batch.sample_ids)

                    optimizer.zero_grad(set_to_none=True)
                    loss.backward()
                    optimizer.step()
                    metrics.record_train_step(tasks_tag)

                    sums["mtl"] += float(loss.detach())
                    for name, value in bundle.as_floats().items():
                        sums[name] += value
                    steps += 1
                scheduler.step()

                means = {n: (v / steps if steps else None) for n, v in sums.items()}
                row   = {"epoch": epoch + 1, "lr": lr, **{n: means.get(n) for n in ("mtl", *LOSS_NAMES)}}
                curve.append(row)
                defined = {k: v for k, v in means.items() if v is not None}
                metrics.record_epoch(defined)
                self.tracker.log_epoch(epoch + 1, defined)
                logger.info("[Trainer] epoch %d/%d lr=%.2e mtl=%s", epoch + 1, cfg.epochs, lr, means["mtl"])

                if cfg.eval_every and cfg.val_manifest and (epoch + 1) % cfg.eval_every == 0:
                    self._validate(epoch + 1)
        except Exception:
            self.tracker.end_run(status="FAILED")
            raise

        self.model.eval()
        result = self._save(curve)
        self.tracker.log_artifact(result.checkpoint)
        self.tracker.end_run()
        return result

    def _validate(self, epoch: int) -> None:
        from orchestration.evaluator import evaluate_model

        self.model.eval()
        report = evaluate_model(self.model, load_manifest(self.config.val_manifest), basis=self.basis,
                                label=f"val-epoch-{epoch}", progress=False)
        self.tracker.log_metrics(report.headline(), prefix="val_")
        logger.info("[Trainer] validation after epoch %d: %s", epoch,
                    ", ".join(f"{k}={v:.4f}" for k, v in report.headline().items() if v is not None))
        self.model.train()

    def _save(self, curve: List[Dict[str, Optional[float]]]) -> TrainResult:
        basis_path = None
        if self.basis is not None:
            basis_path = self.out_dir / BASIS_NAME
            self.basis.save(basis_path)
        spec  = self.manifest.spec
        extra = {
            "basis"          : BASIS_NAME if basis_path else None,
            "class_weights"  : self.class_weights.tolist() if self.class_weights is not None else None,
            "class_names"    : spec.class_names,
            "thing_names"    : [t.name for t in spec.thing_classes],
            "image_size"     : [spec.image_height, spec.image_width],
            "train_manifest" : str(self.manifest.root),
            "final_mtl"      : curve[-1]["mtl"] if curve else None,
        }
        ckpt = save_checkpoint(self.out_dir / CHECKPOINT_NAME, self.model, extra)
        write_curve(self.out_dir / CURVE_NAME, curve)
        logger.info("[Trainer] checkpoint written to %s", ckpt)
        return TrainResult(checkpoint=ckpt, curve=curve, basis=basis_path)


def train(config: RunConfig, model: Optional[UniNet] = None, progress: bool = True) -> TrainResult:
    return Trainer(config, model=model, progress=progress).train()
