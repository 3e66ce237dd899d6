from evaluation.detection_ap   import APAccumulator, average_precision, interpolated_ap, pairwise_iou
from evaluation.dense          import (ConfusionMatrix, DepthAccumulator, RegionAccumulator, class_region_metrics,
                                       depth_metrics, instance_depth_metrics, match_instance_depths,
                                       mean_aspect_ratio, miou)
from evaluation.ratios         import METRIC_DIRECTIONS, Direction, delta_mtl, direction_of, metric_ratio
from evaluation.report         import MetricReport, read_reports_csv, report_ratios, write_reports_csv
from evaluation.mlflow_tracker import ExperimentTracker
