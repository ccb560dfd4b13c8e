# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import os

import numpy as np
import pytest

from weakhoi.data import GenSpec, generate
from weakhoi.evaluation import evaluate
from weakhoi.learning import TrainConfig, apply_preset, train
from weakhoi.model import HOIModel

SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def desk_data():
    if not os.environ.get("WEAKHOI_DESK_SCALE", None):
        pytest.skip("The WEAKHOI_DESK_SCALE env var was not set, desk scale learning runs will be skipped")

    spec = GenSpec(seed=7, num_images=250, image_size=(64, 64), num_verbs=6, num_objects=5, num_combos=12)
    vocabulary, dataset = generate(spec)
    return vocabulary, dataset[:200], dataset[200:]


def mean_ap(vocabulary, train_set, test_set, model, params):
    detections = []
    for scene in test_set:
        detections.extend(model.detect(scene, params))
    return evaluate(detections, test_set, vocabulary, train_dataset=train_set).mAP_full


@pytest.fixture(scope="module")
def runs(desk_data):
    """Memoised (untrained mAP, trained mAP) per (preset, seed)."""
    results = {}

    def run(preset, seed):
        if (preset, seed) not in results:
            vocabulary, train_set, test_set = desk_data
            config = apply_preset(TrainConfig(seed=seed), preset)
            model = HOIModel(config.model, vocabulary)
            initial = model.init_params(np.random.default_rng(seed))
            untrained = mean_ap(vocabulary, train_set, test_set, model, initial)
            store, _ = train(train_set, vocabulary, config, model=model)
            results[(preset, seed)] = untrained, mean_ap(vocabulary, train_set, test_set, model, store.params)
        return results[(preset, seed)]

    return run


def test_training_beats_initialisation(runs):
    results = [runs("full", seed) for seed in SEEDS]
    untrained = float(np.median([r[0] for r in results]))
    trained = float(np.median([r[1] for r in results]))
    assert trained >= 3 * untrained


def test_ablation_order(runs):
    actual = {
        preset: float(np.median([runs(preset, seed)[1] for seed in SEEDS]))
        for preset in ("full", "no_src", "no_ktn_no_src")
    }
    assert actual["full"] >= actual["no_src"] >= actual["no_ktn_no_src"]
