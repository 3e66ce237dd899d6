import os

import numpy as np
import pytest

from scenegen.dataset import render_dataset
from scenegen.spec import InstanceAnnotation, Sample, SceneSpec, ThingClassSpec, mask_median_depth, tight_box
from uninet.config import ModelConfig

RUN_SLOW = os.getenv("UNINET_RUN_SLOW") == "1"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training runs, enabled with UNINET_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set UNINET_RUN_SLOW=1 to run desk-scale experiments")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


# ── Specs and configs ─────────────────────────────────────────────

def small_things():
    return [
        ThingClassSpec(name="person", aspect_mean=0.45, aspect_spread=0.05, size_range=(110.0, 150.0),
                       shape="ellipse", color=(0.75, 0.25, 0.30)),
        ThingClassSpec(name="car", aspect_mean=2.0, aspect_spread=0.2, size_range=(120.0, 160.0),
                       shape="rect", color=(0.25, 0.35, 0.75)),
    ]


@pytest.fixture(scope="session")
def tiny_spec() -> SceneSpec:
    return SceneSpec(
        image_height         = 128,
        image_width          = 128,
        thing_classes        = small_things(),
        instance_count_range = (2, 3),
        instance_depth_range = (4.0, 10.0),
        seed                 = 7,
    )


@pytest.fixture(scope="session")
def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        num_stuff_classes     = 2,
        num_thing_classes     = 2,
        encoder_channels      = (8, 8, 12, 12, 16, 16),
        decoder_channels      = 8,
        head_channels         = 8,
        tower_convs           = 1,
        pixel_reduce_channels = 8,
        mask_code_dim         = 4,
        fpn_channels          = 8,
    )


# ── Data ──────────────────────────────────────────────────────────

@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec, tmp_path_factory):
    return render_dataset(tiny_spec, 8, tmp_path_factory.mktemp("data") / "train")


@pytest.fixture(scope="session")
def tiny_run(tiny_dataset, tiny_model_config, tmp_path_factory):
    """One epoch of five-task training on the tiny split."""
    from orchestration.state import RunConfig
    from orchestration.trainer import train

    config = RunConfig(
        tasks          = "od,ss,is,d,id",
        train_manifest = str(tiny_dataset.root),
        out_dir        = str(tmp_path_factory.mktemp("run")),
        epochs         = 1,
        batch_size     = 2,
        mask_side      = 8,
        model          = tiny_model_config,
    )
    return config, train(config, progress=False)


def box_sample(boxes, classes, height=128, width=128, depth=10.0) -> Sample:
    """Sample whose instances are the given filled boxes (x0, y0, x1, y1), later ones on top."""
    seg   = np.zeros((height, width), dtype=np.uint8)
    seg[height // 2:] = 1
    dmap  = np.full((height, width), depth, dtype=np.float32)
    owner = np.full((height, width), -1)
    for i, (x0, y0, x1, y1) in enumerate(boxes):
        owner[y0:y1, x0:x1] = i
    instances = []
    for i, c in enumerate(classes):
        mask = owner == i
        seg[mask] = 2 + c
        instances.append(InstanceAnnotation(class_id=c, box=tight_box(mask), mask=mask,
                                             median_depth=mask_median_depth(mask, dmap)))
    image = np.full((height, width, 3), 0.5, dtype=np.float32)
    return Sample(image=image, seg_gt=seg, depth_gt=dmap, instances=instances, sample_id="box")
