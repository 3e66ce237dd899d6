"""
ExperimentRecipe: a named, ordered list of CLI stages kept in one JSON file.

    {
      "name": "shape-bias",
      "stages": [
        {"stage": "gen",    "args": {"count": 200, "out": "lab/data/train"}},
        {"stage": "train",  "args": {"data": "lab/data/train", "tasks": "od,ss,d", "out": "lab/run"}},
        {"stage": "attack", "args": {"checkpoint": "lab/run/model.pt", "data": "lab/data/train",
                                     "attack": "dag", "swap": "person:car", "out": "lab/dag"}},
        {"stage": "report", "args": {"campaign": "lab/dag", "out": "lab/dag/report"}}
      ]
    }

Every path a stage reads must exist already or lie under a path an earlier
stage writes.
"""
from pathlib import Path
from typing import Dict, List, Literal, Union

from pydantic import BaseModel, Field

SCHEMA_VERSION = "1"

StageName = Literal["gen", "train", "eval", "attack", "report"]

# flags naming a path the stage reads / writes
INPUT_FLAGS  = ("spec", "data", "val", "config", "checkpoint", "campaign", "summary")
OUTPUT_FLAGS = ("out",)

ArgValue = Union[str, int, float, bool, List[Union[str, int, float]]]


class RecipeStage(BaseModel):
    stage : StageName
    args  : Dict[str, ArgValue] = Field(default_factory=dict, description="flag name (without --) -> value")

    def argv(self) -> List[str]:
        """Command line of the stage: lists become comma lists, True becomes a bare flag, False is dropped."""
        out = [self.stage]
        for key, value in self.args.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(value, bool):
                if value:
                    out.append(flag)
                continue
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            out += [flag, str(value)]
        return out

    def inputs(self) -> List[Path]:
        return [Path(str(self.args[k])) for k in INPUT_FLAGS if k in self.args]

    def outputs(self) -> List[Path]:
        return [Path(str(self.args[k])) for k in OUTPUT_FLAGS if k in self.args]


class ExperimentRecipe(BaseModel):
    schema_version : str                = Field(default=SCHEMA_VERSION)
    name           : str
    stages         : List[RecipeStage]  = Field(default_factory=list)

    def check_inputs(self) -> None:
        """Raise ValueError for a stage input that neither exists nor is produced by an earlier stage."""
        produced: List[Path] = []
        for i, stage in enumerate(self.stages):
            for path in stage.inputs():
                from_earlier = any(path == p or p in path.parents for p in produced)
                if not from_earlier and not path.exists():
                    raise ValueError(f"stage {i} ({stage.stage}) reads {path}, which neither exists "
                                     f"nor is produced by an earlier stage")
            produced.extend(stage.outputs())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentRecipe":
        return cls.model_validate_json(Path(path).read_text())

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2))
        return path
