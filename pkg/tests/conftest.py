import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cftrack import autoencoder as ae
from cftrack import context, synth
from cftrack.config import PipelineConfig
from cftrack.features import (
    BoundingBox,
    BuiltinFeatureConfig,
    BuiltinFeatureSource,
    extract_roi,
)
from cftrack.tracker import TrackerModels

# test-scale geometry: 128 px ROIs on a 32x32 feature grid
TEST_INPUT = 128
TEST_CFG = PipelineConfig(
    n_experts=2,
    input_size=TEST_INPUT,
    base_lr=1e-5,
    base_epochs=8,
    expert_lr=1e-4,
    expert_epochs=6,
    adapt_lr=1e-6,
    adapt_epochs=10,
)


def make_scene_map(src, rng):
    """Feature map of one random synthetic scene's target-centered ROI."""
    bg = synth.smooth_background(200, 200, rng)
    sprite = synth.textured_sprite(32, rng)
    frame = synth.render_frame(bg, sprite, (100.0, 100.0))
    patch = extract_roi(frame, BoundingBox(84, 84, 32, 32), 2.5, TEST_INPUT)
    return src.extract(patch).astype(np.float64)


@dataclass
class World:
    cfg: PipelineConfig
    source: BuiltinFeatureSource
    models: TrackerModels
    training_maps: list


@pytest.fixture(scope="session")
def world() -> World:
    """One trained pipeline shared by tracker and acceptance tests."""
    cfg = TEST_CFG
    rng = np.random.default_rng(0)
    source = BuiltinFeatureSource(
        BuiltinFeatureConfig(input_size=cfg.input_size, cell_size=cfg.cell_size,
                             channels=cfg.feature_channels, seed=cfg.seed)
    )
    maps = [make_scene_map(source, rng) for _ in range(24)]
    base = ae.pretrain_base(
        maps,
        ae.TrainConfig(
            learning_rate=cfg.base_lr,
            epochs=cfg.base_epochs,
            batch_size=cfg.batch_size,
            seed=1,
            depth=cfg.depth,
        ),
    )
    descriptors = np.stack(
        [context.make_descriptor(ae.compress(base, m)) for m in maps]
    )
    clusters = context.two_step_cluster(
        descriptors, cfg.n_experts, rng=np.random.default_rng(2), trials=200
    )
    experts = [
        ae.train_expert(
            base,
            [m for m, a in zip(maps, clusters.assignments) if a == d],
            ae.TrainConfig(
                learning_rate=cfg.expert_lr,
                epochs=cfg.expert_epochs,
                batch_size=cfg.batch_size,
                seed=3,
                depth=cfg.depth,
            ),
        )
        for d in range(1, cfg.n_experts + 1)
    ]
    selector = context.train_selector(
        descriptors,
        clusters.assignments,
        context.SelectorTrainConfig(epochs=60, hidden=64, seed=4, n_classes=cfg.n_experts),
    )
    return World(
        cfg=cfg,
        source=source,
        models=TrackerModels(base=base, experts=experts, selector=selector),
        training_maps=maps,
    )
