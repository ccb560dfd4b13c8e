# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import numpy as np
import pytest

from weakhoi.data import (
    GenSpec,
    GTInstance,
    PixelMode,
    PixelSource,
    Proposal,
    ProposalKind,
    SceneRecord,
)
from weakhoi.geometry import Box
from weakhoi.model import HOIModel, ModelConfig
from weakhoi.vocab import Combo, HOIVocabulary, ObjectEntry, RoleTag, VerbEntry

IMAGE_SIZE = (32, 32)


@pytest.fixture()
def vocabulary():
    verbs = [VerbEntry(0, "ride", "riding"), VerbEntry(1, "hold", "holding"), VerbEntry(2, "cut", "cutting")]
    objects = [ObjectEntry(0, "bicycle"), ObjectEntry(1, "knife"), ObjectEntry(2, "apple")]
    combos = [
        Combo(0, 0, 0, RoleTag.OBJECT),
        Combo(1, 1, 0, RoleTag.OBJECT),
        Combo(2, 1, 1, RoleTag.OBJECT),
        Combo(3, 2, 1, RoleTag.INSTRUMENT),
        Combo(4, 1, 2, RoleTag.OBJECT),
        Combo(5, 2, 2, RoleTag.OBJECT),
    ]
    return HOIVocabulary(verbs, objects, combos, rare_threshold=2)


@pytest.fixture()
def scene():
    """Two humans, a bicycle and a knife; the first human rides the bicycle, the second cuts with the knife."""
    ride_h, ride_o = Box(2, 2, 12, 20), Box(8, 10, 16, 18)
    cut_h, cut_o = Box(18, 4, 28, 24), Box(20, 14, 26, 20)
    return SceneRecord(
        image_id="000000",
        width=IMAGE_SIZE[1],
        height=IMAGE_SIZE[0],
        pixels=PixelSource(PixelMode.SEED, 11),
        proposals=(
            Proposal(ride_h, ProposalKind.HUMAN, None, 0.9),
            Proposal(cut_h, ProposalKind.HUMAN, None, 0.8),
            Proposal(ride_o, ProposalKind.OBJECT, 0, 0.7),
            Proposal(cut_o, ProposalKind.OBJECT, 1, 0.6),
        ),
        image_labels=(0, 3),
        gt_instances=(
            GTInstance(ride_h, ride_o, 0, 0),
            GTInstance(cut_h, cut_o, 1, 2),
        ),
    )


@pytest.fixture()
def gen_spec():
    return GenSpec(
        seed=3,
        num_images=6,
        image_size=IMAGE_SIZE,
        num_verbs=3,
        num_objects=3,
        num_combos=5,
        instances=(1, 1),
        rare_threshold=2,
    )


@pytest.fixture()
def model_config():
    return ModelConfig(embed_dim=4, patch_size=8, image_size=IMAGE_SIZE)


@pytest.fixture()
def model(model_config, vocabulary):
    return HOIModel(model_config, vocabulary)


@pytest.fixture()
def params(model):
    return model.init_params(np.random.default_rng(0))
