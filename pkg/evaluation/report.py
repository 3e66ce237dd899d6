import csv
import math
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field

from evaluation.ratios import METRIC_DIRECTIONS, Direction, metric_ratio

SCHEMA_VERSION = "1"
NA = "NA"

HEADLINE_METRICS = tuple(METRIC_DIRECTIONS)
CSV_FIELDS       = ("run", "metric", "value")


def format_value(value: Optional[float]) -> str:
    """Lossless text for a metric value; NA for undefined."""
    if value is None:
        return NA
    if isinstance(value, float) and not math.isfinite(value):
        raise ValueError(f"non-finite metric value {value!r}")
    return repr(float(value))


def parse_value(text: str) -> Optional[float]:
    return None if text == NA else float(text)


class MetricReport(BaseModel):
    """
    Every task metric of one evaluation run. Metrics the checkpoint cannot
    produce (and metrics with no support, e.g. no matched instances) are None.
    """
    schema_version : str                                         = Field(default=SCHEMA_VERSION)
    label          : str                                         = Field(default="clean", description="run / cell name")
    num_samples    : int                                         = Field(default=0, ge=0)
    map_box        : Optional[float]                             = Field(default=None, ge=0, le=1, description="mAP^b")
    map_mask       : Optional[float]                             = Field(default=None, ge=0, le=1, description="mAP^m")
    miou           : Optional[float]                             = Field(default=None, ge=0, le=1)
    depth_rmse     : Optional[float]                             = Field(default=None, ge=0, description="meters")
    depth_abs_rel  : Optional[float]                             = Field(default=None, ge=0)
    id_l1          : Optional[float]                             = Field(default=None, ge=0, description="meters")
    id_abs_rel     : Optional[float]                             = Field(default=None, ge=0)
    per_class      : Dict[str, Dict[str, Optional[float]]]       = Field(default_factory=dict,
                                                                         description="breakdown -> class name -> value")
    extra          : Dict[str, Optional[float]]                  = Field(default_factory=dict,
                                                                         description="region metrics, losses, flip rates")

    @property
    def directions(self) -> Dict[str, Direction]:
        return dict(METRIC_DIRECTIONS)

    def headline(self) -> Dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in HEADLINE_METRICS}

    # ── Flat form ────────────────────────────────────────────────

    def flat(self) -> Dict[str, Optional[float]]:
        """metric name -> value; per-class entries are 'breakdown/class', extras 'extra/name'."""
        out: Dict[str, Optional[float]] = {"num_samples": float(self.num_samples)}
        out.update(self.headline())
        for breakdown, values in self.per_class.items():
            for cls, v in values.items():
                out[f"{breakdown}/{cls}"] = v
        for name, v in self.extra.items():
            out[f"extra/{name}"] = v
        return out

    @classmethod
    def from_flat(cls, label: str, values: Dict[str, Optional[float]]) -> "MetricReport":
        fields: Dict[str, object] = {"label": label, "per_class": {}, "extra": {}}
        for name, v in values.items():
            if name == "num_samples":
                fields["num_samples"] = int(v)
            elif name in HEADLINE_METRICS:
                fields[name] = v
            elif name.startswith("extra/"):
                fields["extra"][name[len("extra/"):]] = v
            elif "/" in name:
                breakdown, klass = name.split("/", 1)
                fields["per_class"].setdefault(breakdown, {})[klass] = v
            else:
                raise ValueError(f"unknown metric {name!r}")
        return cls(**fields)

    def to_rows(self) -> List[Dict[str, str]]:
        return [{"run": self.label, "metric": k, "value": format_value(v)} for k, v in self.flat().items()]

    # ── Files ────────────────────────────────────────────────────

    def to_csv(self, path: Union[str, Path]) -> Path:
        return write_reports_csv([self], path)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "MetricReport":
        reports = read_reports_csv(path)
        if len(reports) != 1:
            raise ValueError(f"{path} holds {len(reports)} runs, expected one")
        return reports[0]

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(self.model_dump_json(indent=2))
        return path

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "MetricReport":
        return cls.model_validate_json(Path(path).read_text())


def write_reports_csv(reports: List[MetricReport], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for report in reports:
            writer.writerows(report.to_rows())
    return path


def read_reports_csv(path: Union[str, Path]) -> List[MetricReport]:
    grouped: Dict[str, Dict[str, Optional[float]]] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            grouped.setdefault(row["run"], {})[row["metric"]] = parse_value(row["value"])
    return [MetricReport.from_flat(label, values) for label, values in grouped.items()]


def report_ratios(before: MetricReport, after: MetricReport) -> Dict[str, Optional[float]]:
    """Metric ratio of every headline metric of `after` relative to `before`."""
    return {name: metric_ratio(getattr(before, name), getattr(after, name), direction)
            for name, direction in METRIC_DIRECTIONS.items()}
