# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import json

import numpy as np
import pytest

import weakhoi.data as datagen
from weakhoi.data import (
    CORRIDOR_DARK,
    HUMAN_COLOR,
    LAYOUT_RESTARTS,
    GenSpec,
    PixelMode,
    PixelSource,
    Proposal,
    ProposalKind,
    SceneRecord,
    build_vocabulary,
    class_counts,
    class_probabilities,
    generate,
    generate_scene,
    generation_manifest,
    jitter_box,
    load_dataset,
    object_color,
    rare_split,
    render_scene,
    save_dataset,
    scene_pixels,
    verb_color,
)
from weakhoi.exceptions import DatasetParseError, GenerationError, InvalidArgument
from weakhoi.geometry import Box, iou


class TestGenSpec(object):
    def test_defaults(self):
        actual = GenSpec()
        assert actual.image_size == (64, 64)
        assert actual.instances == (1, 3)

    def test_lists_become_tuples(self):
        actual = GenSpec(image_size=[32, 48], instances=[2, 2])
        assert actual.image_size == (32, 48)
        assert actual.instances == (2, 2)

    @pytest.mark.parametrize(
        "overrides, match",
        [
            ({"image_size": (36, 36)}, "not divisible by patch 8"),
            ({"image_size": (24, 24)}, "at least 32x32"),
            ({"num_verbs": 0}, "num_verbs"),
            ({"num_verbs": 2, "num_objects": 2, "num_combos": 5}, "num_combos"),
            ({"instances": (2, 1)}, "instances"),
            ({"jitter": 0.5}, "jitter"),
            ({"skew": -1.0}, "must not be negative"),
        ],
    )
    def test_invalid(self, overrides, match):
        with pytest.raises(InvalidArgument, match=match):
            GenSpec(**overrides)


class TestVocabularyBuilder(object):
    def test_build(self, gen_spec):
        actual = build_vocabulary(gen_spec)
        assert actual.num_verbs == 3
        assert actual.num_objects == 3
        assert actual.num_combos == 5
        assert actual.rare_threshold == 2
        keys = [(c.verb_id, c.object_id) for c in actual.combos]
        assert keys == sorted(keys)
        assert [c.hoi_id for c in actual.combos] == list(range(5))

    def test_deterministic(self, gen_spec):
        assert build_vocabulary(gen_spec) == build_vocabulary(gen_spec.copy())

    def test_full_grid(self):
        actual = build_vocabulary(GenSpec(num_verbs=2, num_objects=2, num_combos=4))
        assert [(c.verb_id, c.object_id) for c in actual.combos] == [(0, 0), (0, 1), (1, 0), (1, 1)]


class TestClassProbabilities(object):
    def test_uniform(self):
        np.testing.assert_allclose(class_probabilities(4, 0.0), [0.25] * 4)

    def test_skewed(self):
        actual = class_probabilities(3, 1.0)
        np.testing.assert_allclose(actual, np.array([1.0, 0.5, 1.0 / 3.0]) / (11.0 / 6.0))
        assert actual.sum() == pytest.approx(1.0)


class TestGenerate(object):
    def test_deterministic(self, gen_spec):
        vocab_a, first = generate(gen_spec)
        vocab_b, second = generate(gen_spec)
        assert vocab_a == vocab_b
        assert [s.to_dict() for s in first] == [s.to_dict() for s in second]

    def test_seed_changes_scenes(self, gen_spec):
        _, first = generate(gen_spec)
        _, second = generate(gen_spec.copy(seed=4))
        assert [s.to_dict() for s in first] != [s.to_dict() for s in second]

    def test_scene_is_valid(self, gen_spec):
        vocabulary, dataset = generate(gen_spec)
        assert [s.image_id for s in dataset] == ["%06d" % i for i in range(6)]
        for scene in dataset:
            assert (scene.height, scene.width) == (32, 32)
            assert scene.pixels.mode == PixelMode.SEED
            assert len(scene.gt_instances) == 1
            assert len(scene.proposals) == 3
            assert len(scene.humans) >= 1
            assert len(scene.objects) >= 1

            gt = scene.gt_instances[0]
            assert gt.human_box.inside(32, 32)
            assert gt.object_box.inside(32, 32)
            assert iou(gt.human_box, gt.object_box) == 0.0
            assert scene.image_labels == (vocabulary.hoi_index(gt.verb, gt.object_class),)

    def test_multiple_instances(self):
        spec = GenSpec(seed=1, num_images=3, instances=(2, 2), distractors=0)
        vocabulary, dataset = generate(spec)
        for scene in dataset:
            assert len(scene.gt_instances) == 2
            assert len(scene.proposals) == 4
            first, second = scene.gt_instances
            assert iou(first.human_box, second.object_box) == 0.0

    def test_given_vocabulary(self, gen_spec, vocabulary):
        actual, dataset = generate(gen_spec, vocabulary=vocabulary)
        assert actual is vocabulary
        for scene in dataset:
            assert all(0 <= h < vocabulary.num_combos for h in scene.image_labels)

    def test_empty(self, gen_spec):
        _, dataset = generate(gen_spec.copy(num_images=0))
        assert dataset == []

    def test_jitter_zero(self):
        box = Box(1, 2, 5, 6)
        assert jitter_box(np.random.default_rng(0), box, 0, 32, 32) is box

    def test_jitter_stays_inside(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert jitter_box(rng, Box(0, 0, 10, 10), 0.4, 12, 12).inside(12, 12)

    @pytest.mark.parametrize("magnitude", [0.05, 0.1])
    def test_jitter_keeps_overlap(self, magnitude):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            w, h = rng.uniform(4.0, 30.0, size=2)
            x1, y1 = rng.uniform(0.0, 64.0 - w), rng.uniform(0.0, 64.0 - h)
            box = Box(x1, y1, x1 + w, y1 + h)
            assert iou(jitter_box(rng, box, magnitude, 64, 64), box) >= 0.5

    def test_skew_follows_class_probabilities(self):
        spec = GenSpec(seed=5, num_images=500, instances=(1, 1), skew=1.0)
        vocabulary, dataset = generate(spec)
        observed = np.zeros(vocabulary.num_combos)
        for scene in dataset:
            for gt in scene.gt_instances:
                observed[vocabulary.hoi_index(gt.verb, gt.object_class)] += 1

        expected = observed.sum() * class_probabilities(vocabulary.num_combos, spec.skew)
        chi2 = float(np.sum((observed - expected) ** 2 / expected))
        # critical value of 11 degrees of freedom at p = 0.001
        assert chi2 < 31.26
        assert observed[0] > observed[-1]

    @pytest.mark.parametrize(
        "spec",
        [
            GenSpec(seed=13, num_images=250),
            GenSpec(seed=1, num_images=500, skew=1.0),
        ],
    )
    def test_crowded_layouts_restart(self, spec):
        _, dataset = generate(spec)
        assert len(dataset) == spec.num_images

    def test_layout_restarts_after_failed_pair(self, mocker):
        original = datagen._place_pair
        calls = []

        def fail_second(*args):
            calls.append(len(args[3]))
            return None if len(calls) == 2 else original(*args)

        mocker.patch("weakhoi.data._place_pair", side_effect=fail_second)
        vocabulary = build_vocabulary(GenSpec())
        scene = generate_scene(GenSpec(instances=(2, 2)), vocabulary, 0)
        assert len(scene.gt_instances) == 2
        # the second layout starts from an empty image
        assert calls == [0, 1, 0, 1]

    def test_layout_gives_up(self, mocker):
        mocker.patch("weakhoi.data._place_pair", return_value=None)
        spec = GenSpec(instances=(1, 1))
        with pytest.raises(GenerationError, match="after %d layouts" % LAYOUT_RESTARTS):
            generate_scene(spec, build_vocabulary(spec), 0)


class TestRender(object):
    def test_render(self, scene):
        pixels = render_scene(scene, 3)
        assert pixels.shape == (32, 32, 3)
        assert pixels.min() >= 0.0 and pixels.max() <= 1.0
        np.testing.assert_allclose(pixels[11, 7], HUMAN_COLOR)
        np.testing.assert_allclose(pixels[14, 12], object_color(0))
        tint = np.asarray(verb_color(0, 3))
        assert np.allclose(pixels[5, 14], tint) or np.allclose(pixels[5, 14], CORRIDOR_DARK * tint)
        assert np.all(pixels[30, 30] < 0.25)

    def test_corridor_mean_keyed_by_verb(self, scene):
        ride, cut = scene.gt_instances
        means = []
        for verb in range(3):
            record = scene._replace(gt_instances=(ride._replace(verb=verb), cut))
            pixels = render_scene(record, 3)
            means.append(pixels[2:10, 12:16].reshape(-1, 3).mean(axis=0))
        for i in range(3):
            for j in range(i + 1, 3):
                assert np.linalg.norm(means[i] - means[j]) > 0.1

    def test_verb_colors_distinct(self):
        colors = np.array([verb_color(v, 6) for v in range(6)])
        assert np.all((colors >= 0.0) & (colors <= 1.0))
        distances = np.linalg.norm(colors[:, None] - colors[None, :], axis=-1)
        assert np.all(distances[~np.eye(6, dtype=bool)] > 0.1)

    def test_render_deterministic(self, scene):
        np.testing.assert_array_equal(render_scene(scene, 3), render_scene(scene, 3))

    def test_scene_pixels_from_file(self, scene, tmp_path):
        path = tmp_path / "pixels.npy"
        expected = np.random.default_rng(1).random((32, 32, 3))
        np.save(str(path), expected)

        record = scene._replace(pixels=PixelSource(PixelMode.PATH, str(path)))
        np.testing.assert_array_equal(scene_pixels(record, 3), expected)

    def test_scene_pixels_wrong_shape(self, scene, tmp_path):
        path = tmp_path / "pixels.npy"
        np.save(str(path), np.zeros((16, 16, 3)))
        record = scene._replace(pixels=PixelSource(PixelMode.PATH, str(path)))
        with pytest.raises(InvalidArgument, match="have shape"):
            scene_pixels(record, 3)


class TestRecords(object):
    def test_proposal_object_needs_class(self):
        with pytest.raises(InvalidArgument, match="Object proposals need an object class"):
            Proposal(Box(0, 0, 1, 1), ProposalKind.OBJECT)

    def test_proposal_score_range(self):
        with pytest.raises(InvalidArgument, match="outside \\[0, 1\\]"):
            Proposal(Box(0, 0, 1, 1), ProposalKind.HUMAN, score=1.5)

    def test_proposal_human_drops_class(self):
        assert Proposal(Box(0, 0, 1, 1), ProposalKind.HUMAN, 3).object_class is None

    def test_unknown_kind(self):
        with pytest.raises(InvalidArgument, match="Unknown proposal kind 'dog'"):
            Proposal(Box(0, 0, 1, 1), "dog")

    def test_gt_helpers(self, scene, vocabulary):
        assert scene.gt_object_classes(vocabulary) == [0, 1]
        assert scene.gt_verbs(vocabulary) == [0, 2]
        assert [i for i, _ in scene.humans] == [0, 1]
        assert [i for i, _ in scene.objects] == [2, 3]

    def test_dict_round_trip(self, scene):
        assert SceneRecord.from_dict(json.loads(json.dumps(scene.to_dict()))) == scene

    def test_gt_outside_image(self, scene):
        data = scene.to_dict()
        data["width"] = 20
        with pytest.raises(InvalidArgument, match="lie outside the image"):
            SceneRecord.from_dict(data)

    def test_unknown_pixel_mode(self, scene):
        data = scene.to_dict()
        data["pixels"]["mode"] = "url"
        with pytest.raises(InvalidArgument, match="Unknown pixel mode 'url'"):
            SceneRecord.from_dict(data)


class TestDatasetFile(object):
    def test_save_load(self, gen_spec, tmp_path):
        _, dataset = generate(gen_spec)
        path = str(tmp_path / "dataset.jsonl")
        save_dataset(dataset, path)
        assert load_dataset(path) == dataset

    def test_blank_lines(self, scene, tmp_path):
        path = tmp_path / "dataset.jsonl"
        path.write_text("\n%s\n\n" % json.dumps(scene.to_dict()), encoding="utf-8")
        assert load_dataset(str(path)) == [scene]

    def test_invalid_json(self, scene, tmp_path):
        path = tmp_path / "dataset.jsonl"
        path.write_text("%s\n{not json\n" % json.dumps(scene.to_dict()), encoding="utf-8")
        with pytest.raises(DatasetParseError) as exc:
            load_dataset(str(path))
        assert exc.value.line_number == 2
        assert exc.value.path == str(path)
        assert str(exc.value).startswith("Failed to parse %s line 2: " % path)

    def test_missing_field(self, scene, tmp_path):
        data = scene.to_dict()
        del data["proposals"]
        path = tmp_path / "dataset.jsonl"
        path.write_text(json.dumps(data) + "\n", encoding="utf-8")
        with pytest.raises(DatasetParseError, match="missing field 'proposals'"):
            load_dataset(str(path))


class TestRareSplit(object):
    def test_counts(self, scene, vocabulary):
        np.testing.assert_array_equal(class_counts([scene], vocabulary), [1, 0, 0, 1, 0, 0])

    def test_split(self, scene, vocabulary):
        assert rare_split([scene], vocabulary) == ([0, 1, 2, 3, 4, 5], [])
        assert rare_split([scene, scene], vocabulary) == ([1, 2, 4, 5], [0, 3])

    def test_manifest(self, gen_spec):
        vocabulary, dataset = generate(gen_spec)
        actual = generation_manifest(gen_spec, vocabulary, dataset)
        assert actual["num_images"] == 6
        assert actual["num_instances"] == 6
        assert sum(actual["class_counts"]) == 6
        assert sorted(actual["rare"] + actual["non_rare"]) == list(range(5))
        assert actual["vocabulary_fingerprint"] == vocabulary.fingerprint()
        assert GenSpec.from_dict(actual["spec"]) == gen_spec
