import logging
import math

import numpy as np
import pytest
import torch

from conftest import box_sample
from losses import (
    DenseTargets,
    LossBundle,
    LossWeights,
    active_losses,
    assign_targets,
    collate_targets,
    compute_losses,
    grouped_losses,
    loss_cent,
    loss_cls,
    loss_depth,
    loss_id,
    loss_is,
    loss_reg,
    loss_seg,
    losses_for_selector,
    mtl_loss,
    seg_class_weights,
    selected_objective,
    task_mask_of,
)
from maskcodec import encode_mask, fit_pca
from scenegen.generator import generate_scene
from uninet import Task, UniNet
from uninet.config import stride_of


def brute_force_owner(sample, config):
    """Reference assignment walking every location and instance."""
    H, W  = sample.seg_gt.shape
    edges = [(0.0, config.level_edges[0]), tuple(config.level_edges), (config.level_edges[1], math.inf)]
    levels = []
    for inst in sample.instances:
        x0, y0, x1, y1 = inst.box
        half = max(x1 - x0, y1 - y0) / 2
        levels.append(next(li for li, (lo, hi) in enumerate(edges) if lo < half <= hi))
    owners = []
    for li, level in enumerate((3, 4, 5)):
        s = stride_of(level)
        for yi in range(H // s):
            for xi in range(W // s):
                px, py = (xi + 0.5) * s, (yi + 0.5) * s
                best, best_area = -1, math.inf
                for g, inst in enumerate(sample.instances):
                    x0, y0, x1, y1 = inst.box
                    d = (px - x0, py - y0, x1 - px, y1 - py)
                    if min(d) <= 0 or levels[g] != li:
                        continue
                    area = (x1 - x0) * (y1 - y0)
                    if area < best_area:
                        best, best_area = g, area
                owners.append(best)
    return np.array(owners)


# ── Target assignment ─────────────────────────────────────────────

@pytest.mark.parametrize("index", range(4))
def test_assignment_matches_brute_force(tiny_spec, tiny_model_config, index):
    sample  = generate_scene(tiny_spec, index)
    targets = assign_targets(sample, tiny_model_config)
    np.testing.assert_array_equal(targets.instance_ids[0].numpy(), brute_force_owner(sample, tiny_model_config))
    pos = targets.positive[0]
    assert (targets.centerness[0][pos] > 0).all() and (targets.centerness[0][pos] <= 1).all()
    assert (targets.centerness[0][~pos] == 0).all()


@pytest.mark.parametrize("boxes", [
    [(20, 20, 80, 80)],
    [(0, 0, 100, 100)],
    [(0, 0, 100, 100), (10, 10, 40, 40), (64, 8, 120, 120)],
])
def test_each_instance_lives_on_one_level(tiny_model_config, boxes):
    targets = assign_targets(box_sample(boxes, [0] * len(boxes)), tiny_model_config)
    ids, strides = targets.instance_ids[0], targets.strides
    for g in range(len(boxes)):
        assert len(set(strides[ids == g].tolist())) == 1


@pytest.mark.parametrize("index", range(6))
def test_generated_instances_live_on_one_level(tiny_spec, tiny_model_config, index):
    targets = assign_targets(generate_scene(tiny_spec, index), tiny_model_config)
    ids, strides = targets.instance_ids[0], targets.strides
    for g in ids[ids >= 0].unique().tolist():
        assert len(set(strides[ids == g].tolist())) == 1


def test_large_box_is_assigned_by_its_centre(tiny_model_config):
    # half side 50 falls in (32, 64]: P4 only, although P3 points near its centre see max(l, t, r, b) <= 32
    targets = assign_targets(box_sample([(0, 0, 100, 100)], [0]), tiny_model_config)
    pos     = targets.positive[0]
    assert set(targets.strides[pos].tolist()) == {16.0}
    assert int(pos.sum()) == 36                              # 6 x 6 P4 points inside


def test_smaller_box_wins_overlap(tiny_model_config):
    sample  = box_sample([(20, 20, 60, 60), (36, 36, 68, 68)], [0, 1])
    targets = assign_targets(sample, tiny_model_config)
    loc     = 5 * 16 + 5                                  # P3 point (44, 44)
    assert targets.instance_ids[0, loc] == 1
    assert targets.labels[0, loc] == 1
    torch.testing.assert_close(targets.box_targets[0, loc], torch.tensor([36., 36., 68., 68.]))


def test_unreachable_instance_is_dropped(tiny_model_config):
    sample  = box_sample([(1, 1, 3, 3), (40, 40, 80, 80)], [0, 1])
    targets = assign_targets(sample, tiny_model_config)
    assert targets.dropped == 1
    assert set(targets.instance_ids[0].unique().tolist()) == {-1, 1}


def test_mask_code_targets(tiny_spec, tiny_model_config):
    samples = [generate_scene(tiny_spec, i) for i in range(10)]
    basis   = fit_pca([(inst.mask, inst.box) for s in samples for inst in s.instances], m=8, k=4)
    targets = assign_targets(samples[0], tiny_model_config, basis)
    for loc in torch.nonzero(targets.positive[0]).flatten().tolist():
        inst = samples[0].instances[int(targets.instance_ids[0, loc])]
        np.testing.assert_allclose(targets.mask_codes[0, loc].numpy(), encode_mask(inst.mask, inst.box, basis),
                                   rtol=1e-5, atol=1e-5)


def test_collate_targets(tiny_spec, tiny_model_config):
    items  = [assign_targets(generate_scene(tiny_spec, i), tiny_model_config) for i in range(3)]
    merged = collate_targets(items)
    assert merged.labels.shape == (3, 336)
    assert merged.seg_gt.shape == (3, 128, 128)
    assert merged.dropped == sum(t.dropped for t in items)
    with pytest.raises(ValueError):
        collate_targets([])


# ── Individual losses ─────────────────────────────────────────────

def test_varifocal_without_positives(tiny_model_config):
    targets = assign_targets(box_sample([], []), tiny_model_config)
    logits  = torch.zeros(1, 336, 2)
    expected = 0.75 * 0.25 * math.log(2) * 336 * 2
    assert float(loss_cls(logits, targets)) == pytest.approx(expected, rel=1e-5)


def test_varifocal_per_class(tiny_model_config):
    targets = assign_targets(box_sample([(20, 20, 60, 60)], [0]), tiny_model_config)
    logits  = torch.zeros(1, 336, 2, requires_grad=True)
    assert float(loss_cls(logits, targets, class_id=0)) > 0
    empty = loss_cls(logits, targets, class_id=1)
    assert float(empty) == 0.0
    empty.backward()
    assert logits.grad is not None


def test_perfect_box_has_zero_regression_loss(tiny_model_config):
    targets = assign_targets(box_sample([(20, 20, 60, 60)], [0]), tiny_model_config)
    pts     = targets.points
    boxes   = targets.box_targets[0]
    dists   = torch.stack([pts[:, 0] - boxes[:, 0], pts[:, 1] - boxes[:, 1],
                           boxes[:, 2] - pts[:, 0], boxes[:, 3] - pts[:, 1]], dim=-1)[None]
    assert float(loss_reg(dists, targets)) == pytest.approx(0.0, abs=1e-5)


def test_uniform_segmentation_logits_give_log_c():
    logits = torch.zeros(2, 4, 8, 8)
    gt     = torch.randint(0, 4, (2, 8, 8), generator=torch.Generator().manual_seed(0))
    weights = seg_class_weights([0.5, 0.3, 0.15, 0.05])
    assert float(loss_seg(logits, gt)) == pytest.approx(math.log(4), rel=1e-5)
    assert float(loss_seg(logits, gt, weights)) == pytest.approx(math.log(4), rel=1e-5)


def test_seg_class_weights_favour_rare_classes():
    w = seg_class_weights([0.6, 0.3, 0.1, 0.0])
    assert float(w.mean()) == pytest.approx(1.0)
    assert w[3] > w[2] > w[1] > w[0]


def located_targets(labels, points, boxes=None, centerness=None, median_depth=None, mask_codes=None):
    """Hand-built targets over a handful of locations."""
    n = len(labels)

    def as_row(values):
        return torch.tensor(values, dtype=torch.float32)[None] if values is not None else torch.zeros(1, n)

    return DenseTargets(
        labels       = torch.tensor(labels)[None],
        instance_ids = torch.tensor(labels)[None],
        box_targets  = torch.tensor(boxes, dtype=torch.float32)[None] if boxes is not None else torch.zeros(1, n, 4),
        centerness   = as_row(centerness),
        median_depth = as_row(median_depth),
        points       = torch.tensor(points, dtype=torch.float32),
        strides      = torch.full((n,), 8.0),
        seg_gt       = torch.zeros(1, 4, 4, dtype=torch.long),
        depth_gt     = torch.ones(1, 1, 4, 4),
        depth_valid  = torch.ones(1, 1, 4, 4, dtype=torch.bool),
        mask_codes   = torch.tensor(mask_codes, dtype=torch.float32)[None] if mask_codes is not None else None,
    )


def test_varifocal_single_positive():
    targets = located_targets([0], [(4.0, 4.0)], centerness=[0.8])
    logits  = torch.tensor([[[0.0, -30.0]]])                  # p = 0.5 on the true class, ~0 elsewhere
    assert float(loss_cls(logits, targets)) == pytest.approx(0.8 * math.log(2), rel=1e-5)
    assert 0.8 * math.log(2) == pytest.approx(0.5545, abs=1e-4)


@pytest.mark.parametrize("point, dists, box, expected", [
    ((0.5, 0.5), (0.5, 0.5, 0.5, 0.5), (2, 0, 3, 1), 4 / 3),
    ((1.0, 1.0), (1.0, 1.0, 1.0, 1.0), (1, 1, 3, 3), 1.0794),
])
def test_giou_against_geometry(point, dists, box, expected):
    targets = located_targets([0], [point], boxes=[box])
    value   = loss_reg(torch.tensor([[dists]]), targets)
    assert float(value) == pytest.approx(expected, abs=1e-4)


@pytest.mark.parametrize("k", [1, 4, 5])
def test_mask_code_mse_is_four_over_k(k):
    codes   = [[0.0] * k, [1.0] * k]
    targets = located_targets([0, 1], [(4.0, 4.0), (12.0, 4.0)], mask_codes=codes)
    pred    = torch.tensor([codes])
    pred[0, :, 0] += 2.0
    assert float(loss_is(pred, targets)) == pytest.approx(4 / k)
    assert float(loss_is(torch.tensor([codes]), targets)) == 0.0


def test_instance_depth_l1():
    targets = located_targets([0, 1, -1], [(4.0, 4.0), (12.0, 4.0), (20.0, 4.0)], median_depth=[10.0, 10.0, 0.0])
    assert float(loss_id(torch.tensor([[8.0, 12.0, 99.0]]), targets)) == pytest.approx(2.0)
    assert float(loss_id(torch.tensor([[10.0, 10.0, 99.0]]), targets)) == 0.0


def test_identical_depth_maps_give_exact_zero():
    gt   = 1.0 + 20.0 * torch.rand(1, 1, 8, 8, generator=torch.Generator().manual_seed(3))
    pred = gt.clone().requires_grad_(True)
    value = loss_depth(pred, gt, gt <= 80)
    assert float(value) == 0.0
    value.backward()
    assert torch.isfinite(pred.grad).all()
    assert float(loss_depth(gt + 1.5, gt)) == pytest.approx(1.5, rel=1e-5)


def test_depth_rmse_and_validity():
    pred  = torch.full((1, 1, 2, 2), 3.0)
    gt    = torch.tensor([[[[1.0, 3.0], [3.0, 100.0]]]])
    valid = gt <= 80
    assert float(loss_depth(pred, gt, valid)) == pytest.approx(math.sqrt(4 / 3))
    assert float(loss_depth(pred, gt, torch.zeros_like(valid))) == 0.0


# ── Bundles and groups ────────────────────────────────────────────

def test_active_losses_and_selectors():
    assert active_losses("od,ss") == ("reg", "cls", "cent", "seg")
    assert losses_for_selector("semantic", "od,ss,d") == ("reg", "cls", "seg")
    assert losses_for_selector("geometric", "od,ss,d,id") == ("depth", "id")
    assert losses_for_selector("mtl", "d") == ("depth",)
    assert losses_for_selector("seg", "ss") == ("seg",)


@pytest.mark.parametrize("selector, tasks", [("geometric", "od,ss"), ("is", "od"), ("bogus", "od")])
def test_bad_selectors(selector, tasks):
    with pytest.raises(ValueError):
        losses_for_selector(selector, tasks)


def test_task_mask_of():
    assert task_mask_of(["id"]) == {Task.OD, Task.ID}
    assert task_mask_of(["seg", "depth"]) == {Task.SS, Task.D}


def test_groups_treat_absent_terms_as_zero():
    bundle = LossBundle({"seg": torch.tensor(2.0), "depth": torch.tensor(3.0), "cent": torch.tensor(7.0)})
    semantic, geometric = grouped_losses(bundle)
    assert float(semantic) == 2.0 and float(geometric) == 3.0
    assert float(grouped_losses(LossBundle())[0]) == 0.0


def test_mtl_is_weighted_geometric_mean():
    bundle  = LossBundle({"seg": torch.tensor(2.0), "depth": torch.tensor(8.0)})
    weights = LossWeights(seg=2.0)
    assert float(mtl_loss(bundle, weights, ("seg", "depth"))) == pytest.approx(math.sqrt(4.0 * 8.0))


def test_mtl_gradient_is_scale_balanced():
    values = torch.tensor([0.5, 4.0, 30.0], dtype=torch.float64, requires_grad=True)
    names  = ("seg", "depth", "id")
    bundle = LossBundle(dict(zip(names, values)))
    m = mtl_loss(bundle, LossWeights(), names)
    m.backward()
    expected = m.detach() / (len(names) * values.detach())
    torch.testing.assert_close(values.grad, expected)
    # each term's relative contribution is equal
    torch.testing.assert_close(values.grad * values.detach(), torch.full((3,), float(m) / 3, dtype=torch.float64))


def test_mtl_gradcheck():
    def fn(x):
        return mtl_loss(LossBundle({"seg": x[0], "depth": x[1]}), LossWeights(), ("seg", "depth"))
    x = torch.tensor([0.7, 2.5], dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(fn, (x,), fast_mode=True)


def test_mtl_floor_clamps_zero_terms():
    bundle = LossBundle({"seg": torch.tensor(0.0), "depth": torch.tensor(4.0)})
    value  = mtl_loss(bundle, LossWeights(), ("seg", "depth"))
    assert float(value) == pytest.approx(math.sqrt(1e-8 * 4.0), rel=1e-5)
    with pytest.raises(ValueError):
        mtl_loss(bundle, LossWeights(), ())


def test_clamp_and_drop_warnings_carry_their_arguments(caplog, tiny_model_config):
    with caplog.at_level(logging.WARNING):
        mtl_loss(LossBundle({"seg": torch.tensor(0.0), "depth": torch.tensor(4.0)}), LossWeights(), ("seg", "depth"))
        assign_targets(box_sample([(1, 1, 3, 3)], [0]), tiny_model_config)
    clamp = next(r for r in caplog.records if r.msg.startswith("[MTL]"))
    drop  = next(r for r in caplog.records if r.msg.startswith("[Targets]"))
    assert clamp.args[0] == "seg" and "'seg'" in clamp.getMessage()
    assert drop.args == ("box", 1)


def test_selected_objective_routes_groups():
    bundle  = LossBundle({"reg": torch.tensor(1.0), "seg": torch.tensor(2.0), "depth": torch.tensor(5.0)})
    weights = LossWeights()
    assert float(selected_objective(bundle, "semantic", weights, ())) == 3.0
    assert float(selected_objective(bundle, "geometric", weights, ())) == 5.0
    assert float(selected_objective(bundle, "reg", weights, ())) == 1.0


def test_compute_losses_on_model_outputs(tiny_spec, tiny_model_config):
    samples = [generate_scene(tiny_spec, i) for i in range(10)]
    basis   = fit_pca([(inst.mask, inst.box) for s in samples for inst in s.instances], m=8, k=4)
    model   = UniNet(tiny_model_config)
    image   = torch.from_numpy(samples[0].image).permute(2, 0, 1)[None]
    targets = assign_targets(samples[0], tiny_model_config, basis)
    names   = active_losses(model.tasks)
    bundle  = compute_losses(model(image), targets, names)
    assert set(bundle.terms) == set(names) == {"reg", "cls", "cent", "seg", "is", "depth", "id"}
    for value in bundle.terms.values():
        assert torch.isfinite(value)
    mtl_loss(bundle, LossWeights(), names).backward()
    assert any(p.grad is not None for p in model.parameters_for("od,is"))


# ── Gradients against finite differences ──────────────────────────

@pytest.fixture(scope="module")
def gradient_targets(tiny_model_config):
    targets = assign_targets(box_sample([(20, 20, 60, 60), (70, 10, 110, 40)], [0, 1], depth=12.0),
                             tiny_model_config)
    targets.mask_codes = torch.randn(1, 336, 3, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    return targets


def _uniform(shape, seed, low=-1.0, high=1.0):
    g = torch.Generator().manual_seed(seed)
    return (low + (high - low) * torch.rand(shape, generator=g, dtype=torch.float64)).requires_grad_(True)


def test_instance_loss_gradients(gradient_targets):
    t = gradient_targets
    assert torch.autograd.gradcheck(lambda z: loss_cls(z, t), (_uniform((1, 336, 2), 0),), fast_mode=True)
    assert torch.autograd.gradcheck(lambda z: loss_cent(z, t), (_uniform((1, 336), 1),), fast_mode=True)
    assert torch.autograd.gradcheck(lambda z: loss_is(z, t), (_uniform((1, 336, 3), 2),), fast_mode=True)
    # depths kept away from the ground truth so the l1 kink is never sampled
    assert torch.autograd.gradcheck(lambda z: loss_id(z, t), (_uniform((1, 336), 3, 20.0, 30.0),), fast_mode=True)

    pts   = t.points.to(torch.float64)
    boxes = t.box_targets[0].to(torch.float64)
    exact = torch.stack([pts[:, 0] - boxes[:, 0], pts[:, 1] - boxes[:, 1],
                         boxes[:, 2] - pts[:, 0], boxes[:, 3] - pts[:, 1]], dim=-1)[None]
    dists = (exact.abs() + 3.0 + _uniform((1, 336, 4), 4).detach()).requires_grad_(True)
    assert torch.autograd.gradcheck(lambda z: loss_reg(z, t), (dists,), fast_mode=True)


def test_pixel_loss_gradients():
    gt    = torch.randint(0, 3, (1, 16, 16), generator=torch.Generator().manual_seed(0))
    w     = seg_class_weights([0.6, 0.3, 0.1]).to(torch.float64)
    assert torch.autograd.gradcheck(lambda z: loss_seg(z, gt, w), (_uniform((1, 3, 16, 16), 5),), fast_mode=True)

    depth = 1.0 + 40.0 * torch.rand(1, 1, 16, 16, generator=torch.Generator().manual_seed(6), dtype=torch.float64)
    valid = depth <= 30
    assert torch.autograd.gradcheck(lambda z: loss_depth(z, depth, valid), (_uniform((1, 1, 16, 16), 7, 1.0, 50.0),),
                                    fast_mode=True)
