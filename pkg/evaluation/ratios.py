"""
Attack and multi-task scores.

metric ratio  fraction of a metric retained after an attack:
              after / before (higher is better), before / after (lower is better)
delta_mtl     (100 / T) * sum_i (-1)^{l_i} (M_i - S_i) / S_i, l_i = 1 for lower-is-better
"""
from enum import Enum
from typing import Dict, Mapping, Optional


class Direction(str, Enum):
    HIGHER = "higher"
    LOWER  = "lower"


METRIC_DIRECTIONS: Dict[str, Direction] = {
    "map_box"       : Direction.HIGHER,
    "map_mask"      : Direction.HIGHER,
    "miou"          : Direction.HIGHER,
    "depth_rmse"    : Direction.LOWER,
    "depth_abs_rel" : Direction.LOWER,
    "id_l1"         : Direction.LOWER,
    "id_abs_rel"    : Direction.LOWER,
}


def metric_ratio(before: Optional[float], after: Optional[float], direction: Direction) -> Optional[float]:
    """None when either value is undefined or the denominator is zero."""
    if before is None or after is None:
        return None
    num, den = (after, before) if Direction(direction) is Direction.HIGHER else (before, after)
    if den == 0:
        return None
    return num / den


def delta_mtl(
    mtl_metrics    : Mapping[str, Optional[float]],
    single_metrics : Mapping[str, Optional[float]],
    directions     : Mapping[str, Direction] = METRIC_DIRECTIONS,
) -> Optional[float]:
    """Mean signed relative change in percent over metrics defined (and nonzero) on both sides."""
    terms = []
    for name, m in mtl_metrics.items():
        s = single_metrics.get(name)
        if m is None or s is None or s == 0:
            continue
        sign = -1.0 if Direction(directions[name]) is Direction.LOWER else 1.0
        terms.append(sign * (m - s) / s)
    if not terms:
        return None
    return 100.0 * sum(terms) / len(terms)


# per-class breakdowns of MetricReport.flat(), keyed by the part before '/'
BREAKDOWN_DIRECTIONS: Dict[str, Direction] = {
    "ap_box"      : Direction.HIGHER,
    "ap_mask"     : Direction.HIGHER,
    "iou"         : Direction.HIGHER,
    "region_iou"  : Direction.HIGHER,
    "region_rmse" : Direction.LOWER,
    "cls_loss"    : Direction.LOWER,
    "reg_loss"    : Direction.LOWER,
}


def direction_of(metric: str) -> Optional[Direction]:
    """Direction of a headline or 'breakdown/class' metric name; None when a ratio is meaningless."""
    if metric in METRIC_DIRECTIONS:
        return METRIC_DIRECTIONS[metric]
    breakdown, sep, _ = metric.partition("/")
    return BREAKDOWN_DIRECTIONS.get(breakdown) if sep else None
