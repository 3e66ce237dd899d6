"""
MLflow — experiment tracking for training runs and attack campaigns

The CSV/JSON reports under the lab directory stay authoritative; MLflow
holds copies for comparing runs across task masks, ε values and loss selectors.

  Each training run or campaign = one MLflow run:
  - Parameters: task mask, epochs, lr, seed, ε, loss selector
  - Metrics:    per-epoch losses, every numeric MetricReport field
  - Artifacts:  checkpoints, campaign CSVs

Tracking is opt-in: without MLFLOW_TRACKING_URI every call is a no-op and
mlflow is never imported.
"""
import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from dotenv import load_dotenv

load_dotenv()

MLFLOW_TRACKING_URI = os.getenv("MLFLOW_TRACKING_URI", "")
MLFLOW_EXPERIMENT   = os.getenv("MLFLOW_EXPERIMENT",   "uninet-lab")

logger = logging.getLogger(__name__)


class ExperimentTracker:
    """
    Thin wrapper over mlflow's fluent API.

    enabled defaults to "MLFLOW_TRACKING_URI is set"; a disabled tracker
    accepts every call and records nothing.
    """

    def __init__(self, enabled: Optional[bool] = None, tracking_uri: str = None, experiment: str = None):
        self.tracking_uri = tracking_uri or MLFLOW_TRACKING_URI
        self.experiment   = experiment or MLFLOW_EXPERIMENT
        self.enabled      = bool(self.tracking_uri) if enabled is None else enabled
        self.mlflow       = None
        self.active_run   = None
        if self.enabled:
            import mlflow
            mlflow.set_tracking_uri(self.tracking_uri)
            mlflow.set_experiment(self.experiment)
            self.mlflow = mlflow
            logger.info("[MLflow] tracking to %s (experiment %s)", self.tracking_uri, self.experiment)

    def start_run(self, run_name: str, params: Mapping[str, Any] = None):
        if not self.enabled:
            return None
        self.active_run = self.mlflow.start_run(run_name=run_name)
        if params:
            self.mlflow.log_params({k: str(v) for k, v in params.items()})
        return self.active_run

    def log_epoch(self, epoch: int, losses: Mapping[str, float]):
        if not self.enabled:
            return
        self.mlflow.log_metrics({f"loss_{k}": float(v) for k, v in losses.items()}, step=epoch)

    def log_metrics(self, values: Mapping[str, Optional[float]], prefix: str = ""):
        """Log numeric values; undefined (None) metrics are skipped, never logged as 0."""
        if not self.enabled:
            return
        clean: Dict[str, float] = {f"{prefix}{k}": float(v) for k, v in values.items() if v is not None}
        if clean:
            self.mlflow.log_metrics(clean)

    def log_artifact(self, path: Union[str, Path]):
        if not self.enabled:
            return
        self.mlflow.log_artifact(str(path))

    def end_run(self, status: str = "FINISHED"):
        if self.enabled and self.active_run:
            self.mlflow.end_run(status=status)
            self.active_run = None
