# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakhoi.data import generate
from weakhoi.exceptions import InvalidArgument, TrainingDiverged
from weakhoi.learning import (
    ABLATION_PRESETS,
    METRIC_NAMES,
    ParameterStore,
    TrainConfig,
    Trainer,
    apply_preset,
    bce_logits,
    bce_logits_grad,
    loss_global,
    loss_pairwise,
    loss_regularization,
    loss_relatedness,
    loss_total,
    pseudo_labels,
    train,
)
from weakhoi.model import BANK, KTNMode

LOG2 = math.log(2.0)


class TestBCE(object):
    def test_zero_logit(self):
        assert bce_logits(0.0, 1) == pytest.approx(LOG2)
        assert isinstance(bce_logits(0.0, 1), float)

    @pytest.mark.parametrize("logit, label", [(50.0, 1), (-50.0, 0), (1000.0, 1)])
    def test_no_overflow(self, logit, label):
        actual = bce_logits(logit, label)
        assert math.isfinite(actual)
        assert actual == pytest.approx(0.0, abs=1e-12)

    def test_confident_wrong(self):
        assert bce_logits(-1000.0, 1) == pytest.approx(1000.0)

    @given(st.floats(min_value=-20.0, max_value=20.0), st.sampled_from([0, 1]))
    def test_gradient_matches_difference(self, logit, label):
        step = 1e-6
        numeric = (bce_logits(logit + step, label) - bce_logits(logit - step, label)) / (2 * step)
        assert float(bce_logits_grad(logit, label)) == pytest.approx(numeric, abs=1e-6)

    def test_elementwise(self):
        actual = bce_logits(np.zeros(3), np.array([1, 0, 1]))
        np.testing.assert_allclose(actual, np.full(3, LOG2))


class TestLossGlobal(object):
    def test_zero_logits(self):
        loss, grad = loss_global(np.zeros(2), [1])
        assert loss == pytest.approx(2 * LOG2)
        np.testing.assert_allclose(grad, [0.5, -0.5])

    def test_no_positives(self):
        loss, _ = loss_global(np.full(4, -40.0), [])
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_matches_per_class_sum(self):
        s_g = np.array([0.3, -1.2, 2.0, 0.0])
        expected = sum(bce_logits(s, 1 if i in (0, 2) else 0) for i, s in enumerate(s_g))
        assert loss_global(s_g, [2, 0])[0] == pytest.approx(expected)

    def test_out_of_range(self):
        with pytest.raises(InvalidArgument, match="hoi_id 2 is out of range"):
            loss_global(np.zeros(2), [2])


class TestLossPairwise(object):
    def test_zero_logits(self):
        loss, _ = loss_pairwise(np.zeros((1, 3)), [1])
        assert loss == pytest.approx(3 * LOG2)

    def test_single_pair_reduction(self):
        S = np.array([[0.4, -0.7, 1.5]])
        loss, dS = loss_pairwise(S, [0, 2])
        assert loss == pytest.approx(float(np.sum(bce_logits(S[0], [1, 0, 1]))))
        np.testing.assert_allclose(dS[0], bce_logits_grad(S[0], [1, 0, 1]))

    def test_gradient_only_through_max(self):
        S = np.array([[0.1, 2.0], [1.0, -1.0], [0.5, 0.3]])
        _, dS = loss_pairwise(S, [0])
        assert dS[1, 0] != 0 and dS[0, 1] != 0
        assert np.count_nonzero(dS) == 2

    def test_out_of_range(self):
        with pytest.raises(InvalidArgument, match="verb id 3 is out of range"):
            loss_pairwise(np.zeros((2, 3)), [3])


class TestPseudoLabels(object):
    def test_masked_argmax(self):
        S = np.array([[0.0, 0.9], [0.0, 5.0], [0.0, 0.3]])
        actual = pseudo_labels(S, [2, 5, 2], [2], [1])
        np.testing.assert_array_equal(actual.B, [1, 0, 0])
        np.testing.assert_array_equal(actual.Z, [[1, 1], [0, 0], [1, 1]])
        assert actual.selected == {1: [0]}

    def test_disjoint_classes(self):
        actual = pseudo_labels(np.ones((2, 2)), [0, 1], [3], [0, 1])
        np.testing.assert_array_equal(actual.B, [0, 0])
        assert actual.selected == {0: [], 1: []}

    def test_same_pair_twice(self):
        S = np.array([[3.0, 3.0], [1.0, 1.0]])
        actual = pseudo_labels(S, [0, 0], [0], [0, 1])
        np.testing.assert_array_equal(actual.B, [1, 0])

    def test_tie_lowest_index(self):
        actual = pseudo_labels(np.zeros((3, 1)), [0, 0, 0], [0], [0])
        np.testing.assert_array_equal(actual.B, [1, 0, 0])

    def test_top_k(self):
        S = np.array([[0.1], [0.9], [0.5], [0.7]])
        actual = pseudo_labels(S, [0, 0, 1, 0], [0], [0], top_k=2)
        np.testing.assert_array_equal(actual.B, [0, 1, 0, 1])

    def test_mismatch(self):
        with pytest.raises(InvalidArgument, match="Got 1 pair classes for 2 pairs"):
            pseudo_labels(np.zeros((2, 1)), [0], [0], [0])

    @settings(max_examples=500, deadline=None)
    @given(st.data())
    def test_matches_brute_force(self, data):
        num_pairs = data.draw(st.integers(min_value=1, max_value=8))
        num_verbs = data.draw(st.integers(min_value=1, max_value=5))
        values = st.sampled_from([-1.0, 0.0, 0.5, 2.0])
        row = st.lists(values, min_size=num_verbs, max_size=num_verbs)
        S = np.array(data.draw(st.lists(row, min_size=num_pairs, max_size=num_pairs)))
        pair_classes = data.draw(st.lists(st.integers(0, 3), min_size=num_pairs, max_size=num_pairs))
        gt_classes = data.draw(st.lists(st.integers(0, 3), min_size=1, max_size=3))
        gt_verbs = data.draw(st.lists(st.integers(0, num_verbs - 1), min_size=1, max_size=3))
        top_k = data.draw(st.sampled_from([1, 2, 5]))

        actual = pseudo_labels(S, pair_classes, gt_classes, gt_verbs, top_k=top_k)

        candidates = [m for m in range(num_pairs) if pair_classes[m] in gt_classes]
        expected = np.zeros(num_pairs, dtype=np.int64)
        for verb in set(gt_verbs):
            for m in candidates:
                beaten_by = [n for n in candidates if S[n, verb] > S[m, verb] or (S[n, verb] == S[m, verb] and n < m)]
                if len(beaten_by) < top_k:
                    expected[m] = 1
        np.testing.assert_array_equal(actual.B, expected)
        for m in range(num_pairs):
            assert actual.Z[m].tolist() == [int(m in candidates)] * num_verbs

        rescored = pseudo_labels(3.0 * S**3 + S, pair_classes, gt_classes, gt_verbs, top_k=top_k)
        np.testing.assert_array_equal(rescored.B, actual.B)
        np.testing.assert_array_equal(rescored.Z, actual.Z)
        assert rescored.selected == actual.selected


class TestLossRelatedness(object):
    def test_zero_logits(self):
        loss, grad = loss_relatedness(np.zeros(2), [1, 0])
        assert loss == pytest.approx(2 * LOG2)
        np.testing.assert_allclose(grad, [-0.5, 0.5])

    def test_warmup(self):
        loss, grad = loss_relatedness(np.array([3.0, -1.0]), [1, 0], warmup=True)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, [0.0, 0.0])

    def test_mismatch(self):
        with pytest.raises(InvalidArgument, match="Got 3 relatedness logits for 2 labels"):
            loss_relatedness(np.zeros(3), [1, 0])


class TestLossRegularization(object):
    def test_value_and_gradients(self):
        v_p = np.array([[1.0, 0.0], [3.0, 2.0]])
        v_g = np.array([1.0, 1.0])
        loss, dv_p, dv_g = loss_regularization(v_p, v_g)
        assert loss == pytest.approx(1.0)
        np.testing.assert_allclose(dv_p, [[1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(dv_g, [-2.0, 0.0])

    def test_no_pairs(self):
        loss, dv_p, dv_g = loss_regularization(np.zeros((0, 2)), np.ones(2))
        assert loss == 0.0
        assert dv_p.shape == (0, 2)
        np.testing.assert_array_equal(dv_g, [0.0, 0.0])


class TestLossTotal(object):
    @pytest.fixture()
    def one_pair_scene(self, scene):
        return scene._replace(
            proposals=(scene.proposals[0], scene.proposals[2]),
            image_labels=(0,),
            gt_instances=scene.gt_instances[:1],
        )

    def test_zero_parameters_closed_form(self, model, params, one_pair_scene):
        zeros = {name: np.zeros_like(value) for name, value in params.items()}
        fwd = model.forward_scene(one_pair_scene, zeros)
        metrics = loss_total(model, fwd, one_pair_scene, zeros, TrainConfig())
        # 6 HOI classes, 3 verbs and 1 relatedness logit, all at zero
        assert metrics["L_g"] == pytest.approx(6 * LOG2)
        assert metrics["L_p"] == pytest.approx(3 * LOG2)
        assert metrics["L_b"] == pytest.approx(LOG2)
        assert metrics["L_reg"] == 0.0
        assert metrics["L"] == pytest.approx(10 * LOG2)

    def test_no_src(self, model, params, scene):
        fwd = model.forward_scene(scene, params)
        metrics = loss_total(model, fwd, scene, params, TrainConfig(w_b=0.0))
        assert metrics["L_b"] == 0.0
        assert metrics["L"] == pytest.approx(metrics["L_g"] + metrics["L_p"])

    def test_warmup_zeroes_relatedness(self, model, params, scene):
        fwd = model.forward_scene(scene, params)
        metrics = loss_total(model, fwd, scene, params, TrainConfig(), src_active=False)
        assert metrics["L_b"] == 0.0

    def test_weights(self, model, params, scene):
        fwd = model.forward_scene(scene, params)
        config = TrainConfig(w_g=2.0, w_p=0.5, w_b=3.0, w_reg=1.5)
        metrics = loss_total(model, fwd, scene, params, config)
        expected = 2.0 * metrics["L_g"] + 0.5 * metrics["L_p"] + 3.0 * metrics["L_b"] + 1.5 * metrics["L_reg"]
        assert metrics["L"] == pytest.approx(expected)
        assert sorted(metrics) == sorted(METRIC_NAMES)

    def test_accumulates_gradients(self, model, params, scene):
        fwd = model.forward_scene(scene, params)
        grads = {name: np.zeros_like(value) for name, value in params.items()}
        loss_total(model, fwd, scene, params, TrainConfig(), grads=grads)
        assert np.any(grads[BANK])
        assert np.any(grads["relatedness.weight"])

    def test_scene_without_pairs(self, model, params, scene):
        humans_only = scene._replace(proposals=scene.proposals[:2])
        fwd = model.forward_scene(humans_only, params)
        metrics = loss_total(model, fwd, humans_only, params, TrainConfig())
        assert metrics["L_p"] == 0.0
        assert metrics["L"] == pytest.approx(metrics["L_g"])


class TestTrainConfig(object):
    def test_defaults(self):
        config = TrainConfig()
        assert config.iterations == 2000
        assert config.warmup_iterations == 400
        assert config.batch_size == 4
        assert config.lr_heads > config.lr_backbone
        assert config.model.ktn_mode == KTNMode.SOFTMAX

    def test_warmup_rounds_up(self):
        assert TrainConfig(iterations=7, warmup_fraction=0.2).warmup_iterations == 2

    def test_nested_dict(self):
        config = TrainConfig(model={"embed_dim": 8})
        assert config.model.embed_dim == 8
        assert TrainConfig.from_dict(config.to_dict()) == config

    @pytest.mark.parametrize(
        "overrides",
        [
            {"lr_heads": 0.0},
            {"batch_size": 0},
            {"warmup_fraction": 1.0},
            {"w_b": -1.0},
            {"lr_decay_factor": 1.5},
            {"log_every": 0},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(InvalidArgument):
            TrainConfig(**overrides)

    def test_private_key(self):
        with pytest.raises(ValueError, match="Cannot set private attribute _defaults"):
            TrainConfig().set(_defaults={})


class TestPresets(object):
    def test_all_presets_valid(self):
        for name in ABLATION_PRESETS:
            apply_preset(TrainConfig(), name)

    def test_no_src(self):
        base = TrainConfig()
        actual = apply_preset(base, "no_src")
        assert actual.w_b == 0.0
        assert actual.model.use_relatedness is False
        assert base.w_b == 1.0
        assert base.model.use_relatedness is True

    def test_baseline(self):
        actual = apply_preset(TrainConfig(), "no_ktn_no_src")
        assert actual.model.ktn_mode == KTNMode.NONE

    def test_unknown(self):
        with pytest.raises(InvalidArgument, match="Unknown ablation preset 'tiny'"):
            apply_preset(TrainConfig(), "tiny")


class TestParameterStore(object):
    def test_first_step_sign(self):
        store = ParameterStore({"head.weight": np.zeros(3), "bank": np.ones(2)}, ["head.weight"], lr_heads=0.1)
        store.step({"head.weight": np.array([2.0, -0.5, 0.0]), "bank": np.ones(2)})
        np.testing.assert_allclose(store.params["head.weight"], [-0.1, 0.1, 0.0], atol=1e-7)
        np.testing.assert_array_equal(store.params["bank"], [1.0, 1.0])
        assert store.step_count == 1

    def test_learning_rates(self):
        store = ParameterStore({"patch.weight": np.zeros(1), "pool.key": np.zeros(1), "bank": np.zeros(1)}, [])
        store.lr_backbone, store.lr_heads = 1.0, 2.0
        assert store.learning_rate("patch.weight") == 1.0
        assert store.learning_rate("pool.key") == 1.0
        assert store.learning_rate("bank") == 2.0

    def test_weight_decay(self):
        store = ParameterStore({"w": np.full(2, 10.0)}, ["w"], lr_heads=0.1, weight_decay=0.5)
        store.step({"w": np.zeros(2)})
        np.testing.assert_allclose(store.params["w"], [9.5, 9.5])

    def test_lr_scale(self):
        store = ParameterStore({"w": np.zeros(1)}, ["w"], lr_heads=0.1)
        store.step({"w": np.ones(1)}, lr_scale=0.1)
        np.testing.assert_allclose(store.params["w"], [-0.01], atol=1e-8)

    def test_shape_mismatch(self):
        store = ParameterStore({"w": np.zeros(2)}, ["w"])
        with pytest.raises(InvalidArgument, match="Gradient of w has shape"):
            store.step({"w": np.zeros(3)})

    def test_unknown_trainable(self):
        with pytest.raises(InvalidArgument, match="Unknown trainable parameters x"):
            ParameterStore({"w": np.zeros(1)}, ["w", "x"])

    def test_all_finite(self):
        store = ParameterStore({"w": np.array([1.0, np.inf])}, [])
        assert not store.all_finite()


class TestTrainer(object):
    @pytest.fixture()
    def dataset(self, gen_spec):
        return generate(gen_spec)

    @pytest.fixture()
    def train_config(self, model_config):
        return TrainConfig(iterations=3, batch_size=2, log_every=1, seed=4, model=model_config)

    def test_zero_iterations(self, dataset, train_config):
        vocabulary, scenes = dataset
        trainer = Trainer(scenes, vocabulary, train_config.copy(iterations=0))
        store, history = trainer.run()
        assert history == []
        initial = trainer.model.init_params(np.random.default_rng(train_config.seed))
        for name, value in initial.items():
            np.testing.assert_array_equal(store.params[name], value)

    def test_replay(self, dataset, train_config):
        vocabulary, scenes = dataset
        first, history = train(scenes, vocabulary, train_config)
        second, _ = train(scenes, vocabulary, train_config)
        assert len(history) == 3
        assert [h["iteration"] for h in history] == [0, 1, 2]
        for name in first.params:
            np.testing.assert_array_equal(first.params[name], second.params[name])

    def test_parameters_move(self, dataset, train_config):
        vocabulary, scenes = dataset
        trainer = Trainer(scenes, vocabulary, train_config)
        initial = trainer.model.init_params(np.random.default_rng(train_config.seed))
        store, _ = trainer.run()
        assert not np.allclose(store.params["interaction.weight"], initial["interaction.weight"])

    def test_frozen_bank(self, dataset, train_config):
        vocabulary, scenes = dataset
        config = apply_preset(train_config, "frozen_bank")
        trainer = Trainer(scenes, vocabulary, config)
        initial = trainer.model.init_params(np.random.default_rng(config.seed))
        store, _ = trainer.run()
        np.testing.assert_array_equal(store.params[BANK], initial[BANK])

    def test_callback(self, dataset, train_config, mocker):
        vocabulary, scenes = dataset
        callback = mocker.MagicMock()
        train(scenes, vocabulary, train_config, callback=callback)
        assert callback.call_count == 3
        iteration, metrics, _ = callback.call_args[0]
        assert iteration == 2
        assert set(METRIC_NAMES) <= set(metrics)

    def test_diverged(self, dataset, train_config, mocker):
        vocabulary, scenes = dataset
        metrics = dict.fromkeys(METRIC_NAMES, 0.0)
        metrics["L"] = metrics["L_g"] = float("nan")
        mocker.patch("weakhoi.learning.loss_total", return_value=metrics)

        with pytest.raises(TrainingDiverged) as exc:
            train(scenes, vocabulary, train_config)
        assert exc.value.iteration == 0
        assert len(exc.value.batch_id.split(",")) == 2
        assert math.isnan(exc.value.diagnostics["losses"]["L"])
        assert "grad_norms" in exc.value.diagnostics

    def test_loss_decreases(self, gen_spec, model_config):
        vocabulary, scenes = generate(gen_spec.copy(num_images=20))
        drops = []
        for seed in (0, 1, 2):
            config = TrainConfig(iterations=80, batch_size=4, warmup_fraction=0.0, seed=seed, model=model_config)
            _, history = train(scenes, vocabulary, config)
            first = np.mean([h["L"] for h in history[:10]])
            last = np.mean([h["L"] for h in history[-10:]])
            drops.append(first - last)
        assert np.median(drops) > 0.0

    def test_empty_dataset(self, vocabulary, train_config):
        with pytest.raises(InvalidArgument, match="empty dataset"):
            Trainer([], vocabulary, train_config)
