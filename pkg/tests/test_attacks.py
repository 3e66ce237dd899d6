import numpy as np
import pytest
import torch

from attacks import (
    AttackConfig,
    AttackError,
    HidingTargetError,
    build_hiding_target_depth,
    build_hiding_target_seg,
    dag_swap_attack,
    hide_class,
    hiding_attack,
    load_perturbation,
    load_trace,
    normalized_step,
    pgd_attack,
    pgd_iterations,
    project,
    save_outcome,
    signed_gradient_steps,
)
from scenegen.generator import generate_scene
from uninet import UniNet, parameter_checksum


@pytest.fixture(scope="module")
def model(tiny_model_config):
    return UniNet(tiny_model_config, tasks="od,ss,d").eval()


@pytest.fixture(scope="module")
def sample(tiny_spec):
    return generate_scene(tiny_spec, 0)


# ── Schedules and projections ─────────────────────────────────────

@pytest.mark.parametrize("eps, iters", [(0, 0), (0.25, 1), (0.5, 1), (1, 2), (2, 3), (4, 5), (8, 10)])
def test_pgd_iteration_schedule(eps, iters):
    assert pgd_iterations(eps) == iters


def test_negative_epsilon_rejected():
    with pytest.raises(ValueError):
        pgd_iterations(-1)


def test_project_clips_to_ball_and_range():
    clean = torch.tensor([0.0, 0.5, 1.0], dtype=torch.float64)
    x     = torch.tensor([-0.3, 0.9, 0.98], dtype=torch.float64)
    torch.testing.assert_close(project(x, clean, 0.1), torch.tensor([0.0, 0.6, 0.98], dtype=torch.float64))


def test_signed_gradient_steps_on_linear_objective():
    clean = torch.full((4,), 0.5, dtype=torch.float64)
    x, trace = signed_gradient_steps(lambda v: v.sum(), clean, eps=0.1, step=0.04, iterations=4)
    torch.testing.assert_close(x, torch.full((4,), 0.6, dtype=torch.float64))
    assert trace == pytest.approx([2.0, 2.16, 2.32, 2.4, 2.4])

    x, _ = signed_gradient_steps(lambda v: v.sum(), clean, eps=0.1, step=0.04, iterations=4, ascend=False)
    torch.testing.assert_close(x, torch.full((4,), 0.4, dtype=torch.float64))


def test_attack_config_validation():
    assert AttackConfig(epsilon=4).resolved_iterations() == 5
    assert AttackConfig(epsilon=4, iterations=2).resolved_iterations() == 2
    with pytest.raises(ValueError):
        AttackConfig(loss_selector="everything")


# ── PGD ───────────────────────────────────────────────────────────

@pytest.mark.parametrize("selector", ["mtl", "semantic", "geometric", "seg"])
def test_pgd_respects_bound(model, sample, selector):
    before  = parameter_checksum(model)
    cfg     = AttackConfig(epsilon=2, loss_selector=selector)
    outcome = pgd_attack(model, sample, cfg)

    assert outcome.linf_255 <= 2.0 + 1e-9
    assert outcome.adversarial.min() >= 0.0 and outcome.adversarial.max() <= 1.0
    assert outcome.iterations == 3 and len(outcome.trace) == 4
    assert outcome.adversarial.dtype == torch.float64
    assert parameter_checksum(model) == before
    assert all(p.grad is None for p in model.parameters())


def test_pgd_with_zero_epsilon_returns_clean_image(model, sample):
    outcome = pgd_attack(model, sample, AttackConfig(epsilon=0))
    assert outcome.iterations == 0
    assert outcome.linf_255 == 0.0
    np.testing.assert_array_equal(outcome.adversarial_hwc(), sample.image)


def test_pgd_rejects_selector_the_model_cannot_compute(model, sample):
    with pytest.raises(ValueError):
        pgd_attack(model, sample, AttackConfig(loss_selector="is"))


# ── DAG ───────────────────────────────────────────────────────────

def test_normalized_step():
    r = torch.tensor([0.5, -2.0, 1.0])
    step = normalized_step(r, 0.1)
    assert float(step.abs().max()) == pytest.approx(0.1)
    assert torch.equal(normalized_step(torch.zeros(3), 0.1), torch.zeros(3))


@pytest.mark.parametrize("c1, c2", [(0, 0), (0, 2), (-1, 1)])
def test_dag_rejects_bad_classes(model, sample, c1, c2):
    with pytest.raises(AttackError):
        dag_swap_attack(model, sample, c1, c2)


def test_dag_needs_detection(tiny_model_config, sample):
    with pytest.raises(AttackError):
        dag_swap_attack(UniNet(tiny_model_config, tasks="ss,d"), sample, 0, 1)


def test_dag_with_empty_target_set(model, sample):
    outcome = dag_swap_attack(model, sample, 0, 1, confidence=1.1)
    assert outcome.target_count == 0
    assert outcome.flipped_fraction is None
    assert outcome.linf_255 == 0.0


def test_dag_steps_are_bounded(model, sample):
    gamma   = 0.5 / 255
    outcome = dag_swap_attack(model, sample, 0, 1, max_iters=3, gamma=gamma, confidence=0.0,
                              include_segmentation=True)
    assert outcome.target_count >= 336
    assert outcome.iterations <= 3
    assert outcome.linf_255 <= 3 * 0.5 + 1e-9
    assert 0.0 <= outcome.flipped_fraction <= 1.0


def test_dag_epsilon_cap(model, sample):
    outcome = dag_swap_attack(model, sample, 0, 1, max_iters=5, gamma=1 / 255, confidence=0.0, epsilon=1.5)
    assert outcome.linf_255 <= 1.5 + 1e-9


# ── Hiding ────────────────────────────────────────────────────────

def brute_force_fill(seg, values, cls):
    out = values.copy()
    sources = [(y, x) for y in range(seg.shape[0]) for x in range(seg.shape[1]) if seg[y, x] != cls]
    for y in range(seg.shape[0]):
        for x in range(seg.shape[1]):
            if seg[y, x] != cls:
                continue
            d = [np.hypot(y - sy, x - sx) for sy, sx in sources]
            best = min(d)
            sy, sx = next(s for s, v in zip(sources, d) if v <= best + 1e-9)
            out[y, x] = values[sy, sx]
    return out


@pytest.mark.parametrize("seed", range(5))
def test_hiding_targets_match_brute_force(seed):
    rng   = np.random.default_rng(seed)
    seg   = rng.integers(0, 3, size=(4, 4))
    seg[0, 0] = 0
    seg[3, 3] = 2
    depth = rng.uniform(1, 50, size=(4, 4)).astype(np.float32)

    np.testing.assert_array_equal(build_hiding_target_seg(seg, 2), brute_force_fill(seg, seg, 2))
    np.testing.assert_array_equal(build_hiding_target_depth(seg, depth, 2), brute_force_fill(seg, depth, 2))
    assert not (build_hiding_target_seg(seg, 2) == 2).any()


def test_hiding_target_without_the_class_is_unchanged():
    seg = np.zeros((3, 3), dtype=np.int64)
    np.testing.assert_array_equal(build_hiding_target_seg(seg, 2), seg)


def test_hiding_target_with_only_the_class():
    with pytest.raises(HidingTargetError):
        build_hiding_target_seg(np.full((3, 3), 2), 2)


def test_hiding_depth_needs_co_registered_maps():
    with pytest.raises(ValueError):
        build_hiding_target_depth(np.zeros((3, 3)), np.zeros((3, 4)), 2)


@pytest.mark.parametrize("head", ["seg", "depth"])
def test_hiding_attack_respects_bound(model, sample, head):
    target  = sample.seg_gt if head == "seg" else sample.depth_gt
    outcome = hiding_attack(model, sample, target, head=head, epsilon=2.0)
    assert outcome.linf_255 <= 2.0 + 1e-9
    assert outcome.iterations == 3 and len(outcome.trace) == 4


def test_hiding_needs_segmentation(tiny_model_config, sample):
    with pytest.raises(AttackError):
        hide_class(UniNet(tiny_model_config, tasks="od,d"), sample, 0)


def test_hiding_unknown_head(model, sample):
    with pytest.raises(AttackError):
        hiding_attack(model, sample, sample.seg_gt, head="normals")


# ── Persistence ───────────────────────────────────────────────────

def test_saved_outcome_round_trip(model, sample, tmp_path):
    outcome = pgd_attack(model, sample, AttackConfig(epsilon=1))
    paths   = save_outcome(outcome, tmp_path, "s0")
    assert paths["image"].exists()
    delta = load_perturbation(paths["perturbation"])
    np.testing.assert_allclose(delta, outcome.perturbation[0].permute(1, 2, 0).numpy(), atol=1e-7)
    assert load_trace(paths["trace"]) == outcome.trace
