from uninet.config      import (ALL_TASKS, GEOMETRIC_TASKS, SEMANTIC_TASKS, ModelConfig, ModelConfigError,
                                ShapeError, Task, format_tasks, parse_tasks, validate_task_mask)
from uninet.outputs     import DenseOutputs, FlatInstanceOutputs, LevelOutputs
from uninet.network     import UniNet
from uninet.detections  import Detection, decode_detections, greedy_nms
from uninet.checkpoint  import CheckpointError, load_checkpoint, parameter_checksum, save_checkpoint

__all__ = [
    "ALL_TASKS",
    "GEOMETRIC_TASKS",
    "SEMANTIC_TASKS",
    "ModelConfig",
    "ModelConfigError",
    "ShapeError",
    "Task",
    "format_tasks",
    "parse_tasks",
    "validate_task_mask",
    "DenseOutputs",
    "FlatInstanceOutputs",
    "LevelOutputs",
    "UniNet",
    "Detection",
    "decode_detections",
    "greedy_nms",
    "CheckpointError",
    "load_checkpoint",
    "parameter_checksum",
    "save_checkpoint",
]
