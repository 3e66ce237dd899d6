import itertools

import numpy as np
import pytest

from evaluation import (
    APAccumulator,
    ConfusionMatrix,
    Direction,
    MetricReport,
    RegionAccumulator,
    average_precision,
    class_region_metrics,
    delta_mtl,
    depth_metrics,
    direction_of,
    instance_depth_metrics,
    interpolated_ap,
    mean_aspect_ratio,
    metric_ratio,
    miou,
    read_reports_csv,
    report_ratios,
    write_reports_csv,
)
from scenegen.spec import InstanceAnnotation
from uninet import Detection


def gt(class_id, box, depth=10.0, shape=(32, 32)):
    mask = np.zeros(shape, dtype=bool)
    mask[box[1]:box[3], box[0]:box[2]] = True
    return InstanceAnnotation(class_id=class_id, box=box, mask=mask, median_depth=depth)


def det(class_id, score, box, depth=None, location=0, mask=None):
    return Detection(class_id=class_id, score=score, box=tuple(float(v) for v in box),
                     mask=mask, median_depth=depth, location=location)


# ── Ratios and multi-task gain ────────────────────────────────────

def test_delta_mtl_reference_values():
    single = {"miou": 64.96, "depth_rmse": 5.802}
    assert delta_mtl({"miou": 74.49, "depth_rmse": 5.379}, single) == pytest.approx(10.98, abs=0.01)
    assert delta_mtl({"miou": 65.14, "depth_rmse": 5.890}, single) == pytest.approx(-0.62, abs=0.01)


def test_delta_mtl_skips_undefined_metrics():
    assert delta_mtl({"miou": 0.5, "depth_rmse": None}, {"miou": 0.4, "depth_rmse": 5.0}) == pytest.approx(25.0)
    assert delta_mtl({"miou": 0.5}, {"miou": 0.0}) is None


@pytest.mark.parametrize("before, after, direction, expected", [
    (77.75, 10.39, Direction.HIGHER, 0.13),
    (77.75, 49.31, Direction.HIGHER, 0.63),
    (5.02, 9.15, Direction.LOWER, 0.55),
    (5.02, 35.20, Direction.LOWER, 0.14),
])
def test_metric_ratio_reference_values(before, after, direction, expected):
    assert metric_ratio(before, after, direction) == pytest.approx(expected, abs=0.005)


def test_metric_ratio_undefined_cases():
    assert metric_ratio(None, 1.0, Direction.HIGHER) is None
    assert metric_ratio(0.0, 1.0, Direction.HIGHER) is None
    assert metric_ratio(1.0, 0.0, Direction.LOWER) is None


def test_direction_of():
    assert direction_of("miou") is Direction.HIGHER
    assert direction_of("depth_rmse") is Direction.LOWER
    assert direction_of("region_rmse/car") is Direction.LOWER
    assert direction_of("ap_box/person") is Direction.HIGHER
    assert direction_of("num_samples") is None
    assert direction_of("extra/flipped_fraction") is None


# ── Segmentation ──────────────────────────────────────────────────

def test_confusion_matrix_miou():
    pred = np.array([[0, 1], [1, 1]])
    gt_  = np.array([[0, 0], [1, 1]])
    cm   = ConfusionMatrix(3).update(pred, gt_)
    assert cm.iou_per_class() == [pytest.approx(0.5), pytest.approx(2 / 3), None]
    assert cm.miou() == pytest.approx((0.5 + 2 / 3) / 2)
    assert miou(gt_, gt_, 3) == 1.0


def miou_by_pixels(pred, gt_, num_classes):
    """Per-class IoU counted one pixel at a time; classes absent from the ground truth are skipped."""
    pairs = list(zip(np.ravel(pred).tolist(), np.ravel(gt_).tolist()))
    ious  = []
    for c in range(num_classes):
        if not any(g == c for _, g in pairs):
            continue
        inter = sum(1 for p, g in pairs if p == c and g == c)
        union = sum(1 for p, g in pairs if p == c or g == c)
        ious.append(inter / union)
    return sum(ious) / len(ious)


def test_miou_against_every_2x2_labelling():
    grids = [np.array(cells).reshape(2, 2) for cells in itertools.product(range(3), repeat=4)]
    for pred in grids:
        for gt_ in grids:
            assert miou(pred, gt_, 3) == pytest.approx(miou_by_pixels(pred, gt_, 3))


@pytest.mark.parametrize("shape, num_classes", [((1, 4), 4), ((3, 3), 3), ((4, 4), 5)])
def test_miou_against_pixel_count_on_random_grids(shape, num_classes):
    rng = np.random.default_rng(num_classes)
    for _ in range(200):
        pred, gt_ = rng.integers(0, num_classes, (2,) + shape)
        assert miou(pred, gt_, num_classes) == pytest.approx(miou_by_pixels(pred, gt_, num_classes))


def test_confusion_matrix_merge_equals_pooled():
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 4, (2, 8, 8)), rng.integers(0, 4, (2, 8, 8))
    merged = ConfusionMatrix(4).update(a[0], b[0]).merge(ConfusionMatrix(4).update(a[1], b[1]))
    pooled = ConfusionMatrix(4).update(a, b)
    np.testing.assert_array_equal(merged.counts, pooled.counts)


def test_confusion_matrix_shape_mismatch():
    with pytest.raises(ValueError):
        ConfusionMatrix(2).update(np.zeros(3), np.zeros(4))


# ── Depth ─────────────────────────────────────────────────────────

def test_depth_metrics_ignore_invalid_pixels():
    pred = np.array([[2.0, 4.0, 7.0]])
    gt_  = np.array([[1.0, 100.0, 0.0]])
    rmse, abs_rel = depth_metrics(pred, gt_)
    assert rmse == pytest.approx(1.0)
    assert abs_rel == pytest.approx(1.0)
    assert depth_metrics(pred, np.full((1, 3), 90.0)) == (None, None)


def test_instance_depth_matching():
    gts  = [gt(0, (0, 0, 10, 10), depth=8.0), gt(1, (20, 20, 30, 30), depth=4.0)]
    dets = [det(1, 0.9, (0, 0, 10, 10), depth=10.0),           # class-agnostic match
            det(0, 0.8, (0, 0, 10, 10), depth=1.0),            # duplicate, gt already taken
            det(0, 0.7, (21, 21, 30, 30), depth=5.0)]
    l1, abs_rel = instance_depth_metrics(dets, gts)
    assert l1 == pytest.approx((2.0 + 1.0) / 2)
    assert abs_rel == pytest.approx((2.0 / 8.0 + 1.0 / 4.0) / 2)
    assert instance_depth_metrics([], gts) == (None, None)


# ── Detection AP ──────────────────────────────────────────────────

def test_perfect_detections_score_one():
    gts = [[gt(0, (2, 2, 12, 12)), gt(1, (15, 15, 30, 25))]]
    preds = [[det(0, 0.9, (2, 2, 12, 12)), det(1, 0.8, (15, 15, 30, 25))]]
    assert average_precision(preds, gts, num_classes=2) == pytest.approx(1.0)


def test_classes_without_ground_truth_are_excluded():
    gts   = [[gt(0, (2, 2, 12, 12))]]
    preds = [[det(0, 0.9, (2, 2, 12, 12)), det(1, 0.95, (20, 20, 30, 30))]]
    acc = APAccumulator(2)
    acc.add(preds[0], gts[0])
    assert acc.per_class() == {0: pytest.approx(1.0), 1: None}
    assert average_precision([[]], [[]], num_classes=2) is None


def test_false_positive_ranked_first_halves_ap():
    gts   = [[gt(0, (2, 2, 12, 12))]]
    preds = [[det(0, 0.9, (20, 20, 30, 30)), det(0, 0.8, (2, 2, 12, 12))]]
    assert average_precision(preds, gts, num_classes=1) == pytest.approx(0.5)


def test_mask_ap_uses_masks():
    g = gt(0, (2, 2, 12, 12))
    assert average_precision([[det(0, 0.9, (2, 2, 12, 12), mask=g.mask)]], [[g]], 1, kind="mask") == 1.0
    assert average_precision([[det(0, 0.9, (2, 2, 12, 12))]], [[g]], 1, kind="mask") == 0.0


def test_interpolated_ap_edge_cases():
    with pytest.raises(ValueError):
        interpolated_ap(np.array([0.5]), np.array([True]), 0)
    assert interpolated_ap(np.zeros(0), np.zeros(0, dtype=bool), 3) == 0.0


def test_ap_accumulators_merge():
    a, b = APAccumulator(1), APAccumulator(1)
    a.add([det(0, 0.9, (2, 2, 12, 12))], [gt(0, (2, 2, 12, 12))])
    b.add([det(0, 0.8, (20, 20, 30, 30))], [gt(0, (0, 0, 5, 5))])
    # recall tops out at 0.5: 51 of the 101 recall points see precision 1
    assert a.merge(b).value() == pytest.approx(51 / 101)
    with pytest.raises(ValueError):
        a.merge(APAccumulator(1, kind="mask"))


# ── Region metrics and shapes ─────────────────────────────────────

def test_class_region_metrics():
    gt_seg  = np.array([[0, 2], [2, 2]])
    pred    = np.array([[2, 2], [0, 2]])
    gt_d    = np.full((2, 2), 10.0)
    pred_d  = np.array([[0.0, 12.0], [10.0, 10.0]])
    iou, rmse = class_region_metrics(pred, pred_d, gt_seg, gt_d, 2)
    assert iou == pytest.approx(2 / 4)
    assert rmse == pytest.approx(np.sqrt(4 / 3))
    assert class_region_metrics(pred, pred_d, gt_seg, gt_d, 3) == (None, None)


def test_region_accumulator_merge():
    gt_seg = np.array([[1, 1], [0, 0]])
    a = RegionAccumulator(1).update(gt_seg, None, gt_seg, None)
    b = RegionAccumulator(1).update(np.zeros((2, 2)), None, gt_seg, None)
    assert a.merge(b).iou() == pytest.approx(2 / 4)


def test_mean_aspect_ratio():
    dets = [det(0, 0.9, (0, 0, 20, 10)), det(0, 0.5, (0, 0, 10, 10)),
            det(0, 0.1, (0, 0, 90, 10)), det(1, 0.9, (0, 0, 5, 10))]
    assert mean_aspect_ratio(dets, 0) == pytest.approx(1.5)
    assert mean_aspect_ratio(dets, 1) == pytest.approx(0.5)
    assert mean_aspect_ratio(dets, 2) is None


# ── Reports ───────────────────────────────────────────────────────

def test_report_csv_round_trip(tmp_path):
    clean = MetricReport(label="clean", num_samples=4, map_box=0.4, miou=0.7, depth_rmse=3.0,
                         per_class={"ap_box": {"person": 0.5, "car": None}}, extra={"forward_seconds": 0.01})
    attacked = MetricReport(label="pgd", num_samples=4, map_box=0.1, miou=0.35, depth_rmse=6.0)
    path = write_reports_csv([clean, attacked], tmp_path / "reports.csv")
    assert "NA" in path.read_text()

    loaded = read_reports_csv(path)
    assert [r.label for r in loaded] == ["clean", "pgd"]
    assert loaded[0] == clean
    assert loaded[1].map_mask is None

    ratios = report_ratios(loaded[0], loaded[1])
    assert ratios["map_box"] == pytest.approx(0.25)
    assert ratios["miou"] == pytest.approx(0.5)
    assert ratios["depth_rmse"] == pytest.approx(0.5)
    assert ratios["map_mask"] is None


def test_report_json_round_trip(tmp_path):
    report = MetricReport(label="x", id_l1=1.25, per_class={"iou": {"sky": 0.9}})
    assert MetricReport.from_json(report.to_json(tmp_path / "r.json")) == report


def test_report_rejects_unknown_metric_and_non_finite_values(tmp_path):
    with pytest.raises(ValueError):
        MetricReport.from_flat("x", {"bogus": 1.0})
    with pytest.raises(ValueError):
        MetricReport(label="x", depth_rmse=float("inf")).to_rows()
