import pytest
import torch

from uninet import (
    CheckpointError,
    ModelConfigError,
    ShapeError,
    Task,
    UniNet,
    format_tasks,
    greedy_nms,
    load_checkpoint,
    parameter_checksum,
    parse_tasks,
    save_checkpoint,
    validate_task_mask,
)
from uninet.detections import decode_detections
from uninet.outputs import DenseOutputs, LevelOutputs


@pytest.fixture(scope="module")
def full_model(tiny_model_config):
    return UniNet(tiny_model_config).eval()


@pytest.fixture(scope="module")
def image():
    return torch.rand(1, 3, 128, 128, generator=torch.Generator().manual_seed(0))


# ── Task masks ────────────────────────────────────────────────────

def test_parse_and_format_tasks():
    assert parse_tasks("ss, od") == {Task.OD, Task.SS}
    assert format_tasks(parse_tasks("id,d,is,ss,od")) == "od,ss,is,d,id"


@pytest.mark.parametrize("bad", ["is", "id", "ss,d,id", ""])
def test_invalid_task_masks(bad):
    with pytest.raises(ModelConfigError):
        validate_task_mask(bad)


def test_unknown_task_name():
    with pytest.raises(ModelConfigError):
        parse_tasks("od,pose")


def test_model_rejects_mask_outside_its_tasks(tiny_model_config, image):
    model = UniNet(tiny_model_config, tasks="od,ss")
    with pytest.raises(ModelConfigError):
        model(image, task_mask="od,d")


# ── Forward ───────────────────────────────────────────────────────

def test_full_forward_shapes(full_model, image):
    with torch.no_grad():
        out = full_model(image)
    assert out.seg_logits.shape == (1, 4, 128, 128)
    assert out.depth_map.shape == (1, 1, 128, 128)
    assert (out.depth_map > 0).all()

    flat = out.flatten()
    assert flat.num_locations == 16 * 16 + 8 * 8 + 4 * 4
    assert flat.cls_logits.shape == (1, 336, 2)
    assert flat.mask_codes.shape == (1, 336, 4)
    assert flat.inst_depth.shape == (1, 336)
    assert (flat.box_dists >= 0).all()
    assert (flat.inst_depth > 0).all()


def test_task_mask_limits_outputs(full_model, image):
    with torch.no_grad():
        out = full_model(image, task_mask="od")
    assert out.seg_logits is None and out.depth_map is None
    flat = out.flatten()
    assert flat.mask_codes is None and flat.inst_depth is None

    with torch.no_grad():
        dense_only = full_model(image, task_mask="d")
    assert not dense_only.has_instances
    assert dense_only.depth_map is not None and dense_only.seg_logits is None


def test_masked_forward_matches_full_forward(full_model, image):
    with torch.no_grad():
        full = full_model(image)
        part = full_model(image, task_mask="ss")
    torch.testing.assert_close(part.seg_logits, full.seg_logits)


@pytest.mark.parametrize("shape", [(1, 3, 100, 128), (1, 1, 128, 128), (3, 128, 128)])
def test_bad_image_shapes(full_model, shape):
    with pytest.raises(ShapeError):
        full_model(torch.zeros(shape))


def test_parameter_sets_grow_with_tasks(full_model):
    count = lambda mask: sum(p.numel() for p in full_model.parameters_for(mask))
    assert count("od") < count("od,is") < count("od,is,id")
    assert count("ss") < count("ss,d")
    assert count("od,ss,is,d,id") == sum(p.numel() for p in full_model.parameters())


def test_forward_does_not_touch_parameters(full_model, image):
    before = parameter_checksum(full_model)
    full_model(image).seg_logits.sum().backward()
    full_model.zero_grad(set_to_none=True)
    assert parameter_checksum(full_model) == before


def readout(out):
    """Fixed random projection of every output onto one scalar."""
    g    = torch.Generator().manual_seed(0)
    flat = out.flatten()
    parts = [out.seg_logits, out.depth_map, flat.cls_logits, flat.centerness, flat.box_dists / 100.0,
             flat.mask_codes, flat.inst_depth]
    return sum((t * torch.randn(t.shape, generator=g, dtype=t.dtype)).sum() for t in parts)


def test_outputs_are_differentiable_in_the_image(tiny_model_config):
    model = UniNet(tiny_model_config).double().eval()
    x     = torch.rand(1, 3, 128, 128, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    x.requires_grad_(True)
    readout(model(x)).backward()

    h = 1e-5
    for c, y, xx in [(0, 0, 0), (1, 37, 90), (2, 64, 64), (0, 127, 5)]:
        up, down = x.detach().clone(), x.detach().clone()
        up[0, c, y, xx]   += h
        down[0, c, y, xx] -= h
        with torch.no_grad():
            numeric = (readout(model(up)) - readout(model(down))) / (2 * h)
        torch.testing.assert_close(x.grad[0, c, y, xx], numeric, rtol=1e-4, atol=1e-6)


def test_decoder_does_not_feed_the_instance_head(tiny_model_config, image):
    model = UniNet(tiny_model_config).eval()
    with torch.no_grad():
        before = model(image, task_mask="od,is,id").flatten()
        for p in model.decoder.parameters():
            p.zero_()
        after = model(image, task_mask="od,is,id").flatten()
    for name in ("cls_logits", "centerness", "box_dists", "mask_codes", "inst_depth"):
        assert torch.equal(getattr(before, name), getattr(after, name))


def test_pixel_heads_share_only_the_trunk(tiny_model_config, image):
    model = UniNet(tiny_model_config)
    seg   = {id(p) for p in model.seg_head.parameters()}
    depth = {id(p) for p in model.depth_head.parameters()}
    assert seg and depth and not seg & depth

    e7 = list(model.encoder.stages[-1].parameters())
    for mask, pick in (("ss", lambda o: o.seg_logits), ("d", lambda o: o.depth_map)):
        model.zero_grad(set_to_none=True)
        target = pick(model(image, task_mask=mask))
        (target * torch.randn(target.shape, generator=torch.Generator().manual_seed(2))).sum().backward()
        assert all(p.grad is not None for p in e7)
        assert any(p.grad.abs().sum() > 0 for p in e7)
        assert all(p.grad is not None for p in model.decoder.blocks["6"].parameters())
        untouched = model.depth_head if mask == "ss" else model.seg_head
        assert all(p.grad is None for p in untouched.parameters())


def test_construction_leaves_global_rng_alone(tiny_model_config):
    state = torch.get_rng_state()
    first = UniNet(tiny_model_config)
    assert torch.equal(torch.get_rng_state(), state)
    assert parameter_checksum(UniNet(tiny_model_config)) == parameter_checksum(first)
    other = UniNet(tiny_model_config.model_copy(update={"seed": tiny_model_config.seed + 1}))
    assert parameter_checksum(other) != parameter_checksum(first)


# ── Detections ────────────────────────────────────────────────────

def test_nms_breaks_ties_by_location():
    boxes     = torch.tensor([[0., 0., 10., 10.], [1., 1., 10., 10.], [50., 50., 60., 60.]])
    scores    = torch.tensor([0.9, 0.9, 0.5])
    locations = torch.tensor([7, 3, 1])
    assert greedy_nms(boxes, scores, locations, 0.5) == [1, 2]


def test_nms_on_nothing():
    empty = torch.zeros((0, 4))
    assert greedy_nms(empty, torch.zeros(0), torch.zeros(0, dtype=torch.long), 0.5) == []


def test_single_location_decodes_to_its_own_box():
    levels = {}
    for level, stride, side in ((3, 8, 16), (4, 16, 8), (5, 32, 4)):
        levels[level] = LevelOutputs(
            stride     = stride,
            cls_logits = torch.full((1, 2, side, side), -20.0),
            centerness = torch.full((1, 1, side, side), 20.0),
            box_dists  = torch.ones(1, 4, side, side),
        )
    levels[4].cls_logits[0, 1, 2, 3] = 10.0                       # P4 point (56, 40)
    levels[4].box_dists[0, :, 2, 3]  = torch.tensor([10.0, 5.0, 20.0, 15.0])

    dets = decode_detections(DenseOutputs(image_size=(128, 128), levels=levels))
    assert len(dets) == 1
    d = dets[0]
    assert d.class_id == 1
    assert d.location == 16 * 16 + 2 * 8 + 3
    assert d.box == pytest.approx((46.0, 35.0, 76.0, 55.0))
    assert d.score == pytest.approx(1.0, abs=1e-3)
    assert d.median_depth is None and d.mask is None


def test_decode_detections_respects_limits(full_model, image):
    with torch.no_grad():
        out = full_model(image)
    dets = decode_detections(out, score_thresh=0.0, max_dets=5)
    assert len(dets) <= 5
    assert [d.score for d in dets] == sorted((d.score for d in dets), reverse=True)
    for d in dets:
        x0, y0, x1, y1 = d.box
        assert 0 <= x0 <= x1 <= 128 and 0 <= y0 <= y1 <= 128
        assert d.median_depth is not None and d.median_depth > 0
    assert decode_detections(out, score_thresh=1.01) == []


# ── Checkpoints ───────────────────────────────────────────────────

def test_checkpoint_round_trip(tiny_model_config, image, tmp_path):
    model = UniNet(tiny_model_config, tasks="od,ss,d").eval()
    path  = save_checkpoint(tmp_path / "m.pt", model, extra={"epochs": 3})
    loaded, extra = load_checkpoint(path)
    assert extra == {"epochs": 3}
    assert loaded.tasks == model.tasks
    assert parameter_checksum(loaded) == parameter_checksum(model)
    with torch.no_grad():
        torch.testing.assert_close(loaded(image).depth_map, model(image).depth_map)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.pt")


def test_checkpoint_version_checked(tiny_model_config, tmp_path):
    path = tmp_path / "old.pt"
    torch.save({"format_version": "0"}, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
