import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import torch

from uninet.config import ModelConfig, format_tasks, parse_tasks
from uninet.network import UniNet

CHECKPOINT_VERSION = "1"


class CheckpointError(Exception):
    pass


def parameter_checksum(model: torch.nn.Module) -> str:
    """sha256 over every tensor of the state dict, in name order."""
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(path: Union[str, Path], model: UniNet, extra: Dict[str, Any] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config"  : model.config.model_dump_json(),
        "tasks"         : format_tasks(model.tasks),
        "state_dict"    : model.state_dict(),
        "extra"         : json.dumps(extra or {}),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[UniNet, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version!r} unsupported (expected {CHECKPOINT_VERSION!r})")
    config = ModelConfig.model_validate_json(payload["model_config"])
    model  = UniNet(config, tasks=parse_tasks(payload["tasks"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, json.loads(payload["extra"])
