# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import collections
import logging
import math

import numpy as np

from weakhoi.config import BaseConfig
from weakhoi.data import scene_pixels
from weakhoi.encoder import BACKBONE_PARAMETERS, POOL_PARAMETERS
from weakhoi.exceptions import InvalidArgument, TrainingDiverged
from weakhoi.model import HOIModel, KTNMode, ModelConfig, aggregate_scores
from weakhoi.nn import sigmoid

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

METRIC_NAMES = ("L", "L_g", "L_p", "L_b", "L_reg")

PseudoLabels = collections.namedtuple("PseudoLabels", ["B", "Z", "selected"])


class TrainConfig(BaseConfig):
    """Optimisation settings, the architecture lives in the nested model config.

    Attributes:
        lr_backbone (float): Adam learning rate of the visual encoder and its attention pool.
        lr_heads (float): Adam learning rate of every other parameter including the knowledge bank.
        iterations (int): Number of optimiser steps.
        batch_size (int): Scenes per step, the loss is averaged over the batch.
        warmup_fraction (float): Leading fraction of the iterations trained without the relatedness loss.
        top_k (int): Positive pairs selected per ground truth verb by the pseudo labeller.
        w_g (float): Weight of the global HOI loss.
        w_p (float): Weight of the aggregated pairwise loss.
        w_b (float): Weight of the relatedness loss, 0 disables self-taught relatedness.
        w_reg (float): Weight of the pair/global feature consistency loss, 0 disables it.
        weight_decay (float): Decoupled weight decay, 0 is plain Adam.
        lr_decay_step (int): Multiply the rates by lr_decay_factor every this many iterations, 0 is off.
        lr_decay_factor (float): The step decay factor.
        seed (int): Seeds parameter initialisation and scene sampling.
        log_every (int): Emit an INFO progress line every this many iterations.
        model (ModelConfig): The model architecture.
    """

    # Tuned on the 64x64 six verb generator: the heads move faster than the encoder and a batch of four keeps the
    # pairwise loss from chasing single scenes.
    _defaults = {
        "lr_backbone": 1e-3,
        "lr_heads": 5e-3,
        "iterations": 2000,
        "batch_size": 4,
        "warmup_fraction": 0.2,
        "top_k": 1,
        "w_g": 1.0,
        "w_p": 1.0,
        "w_b": 1.0,
        "w_reg": 0.0,
        "weight_decay": 0.0,
        "lr_decay_step": 1500,
        "lr_decay_factor": 0.2,
        "seed": 0,
        "log_every": 50,
    }
    _nested = {"model": ModelConfig}

    def _validate(self):
        if not (self.lr_backbone > 0 and self.lr_heads > 0):
            raise InvalidArgument("Learning rates must be positive")
        if self.iterations < 0 or self.batch_size < 1 or self.top_k < 1:
            raise InvalidArgument("iterations must be >= 0, batch_size and top_k >= 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise InvalidArgument("warmup_fraction must be in [0, 1), got %s" % self.warmup_fraction)
        if min(self.w_g, self.w_p, self.w_b, self.w_reg, self.weight_decay) < 0:
            raise InvalidArgument("Loss weights and weight decay must not be negative")
        if self.lr_decay_step < 0 or not 0 < self.lr_decay_factor <= 1:
            raise InvalidArgument("lr_decay_step must be >= 0 and lr_decay_factor in (0, 1]")
        if self.log_every < 1:
            raise InvalidArgument("log_every must be positive")

    @property
    def warmup_iterations(self):
        return int(math.ceil(self.warmup_fraction * self.iterations))


# Named ablations, each maps to TrainConfig.set() overrides.
ABLATION_PRESETS = {
    "full": {},
    "no_src": {"w_b": 0.0, "model": {"use_relatedness": False}},
    "no_ktn_no_src": {"w_b": 0.0, "model": {"ktn_mode": KTNMode.NONE, "use_relatedness": False}},
    "frozen_bank": {"model": {"bank_trainable": False}},
    "random_bank": {"model": {"bank_init": "random"}},
    "uniform_ktn": {"model": {"ktn_mode": KTNMode.UNIFORM}},
    "sigmoid_ktn": {"model": {"ktn_mode": KTNMode.SIGMOID}},
    "union_only_ktn": {"model": {"ktn_mode": KTNMode.UNION_ONLY}},
    "visual_reg": {"w_reg": 1.0},
}


def apply_preset(config, name):
    """Returns a copy of the TrainConfig with the named ablation applied."""
    if name not in ABLATION_PRESETS:
        raise InvalidArgument("Unknown ablation preset '%s', expecting one of %s" % (name, ", ".join(ABLATION_PRESETS)))
    overrides = ABLATION_PRESETS[name]
    updated = config.copy(**{k: v for k, v in overrides.items() if k != "model"})
    updated.model.set(**overrides.get("model", {}))
    return updated


def bce_logits(logit, label):
    """
    Binary cross entropy on logits in the overflow free form max(x, 0) - x * y + log(1 + exp(-|x|)).

    :param logit: Scalar or array of logits.
    :param label: Matching 0/1 targets.
    :return: The elementwise loss, a float for scalar input.
    """
    x = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    loss = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    return float(loss) if loss.ndim == 0 else loss


def bce_logits_grad(logit, label):
    """d bce / d logit = sigmoid(logit) - label."""
    return sigmoid(logit) - np.asarray(label, dtype=np.float64)


def _multi_hot(ids, size, what):
    target = np.zeros(size)
    for i in ids:
        if not 0 <= i < size:
            raise InvalidArgument("%s %s is out of range [0, %d)" % (what, i, size))
        target[i] = 1.0
    return target


def loss_global(s_g, positives):
    """
    Multi label BCE of the global HOI logits against the image labels.

    :param s_g: The N global logits.
    :param positives: Iterable of hoi_ids present in the image.
    :return: (L_g, dL_g / ds_g).
    """
    s_g = np.asarray(s_g, dtype=np.float64)
    target = _multi_hot(positives, s_g.shape[0], "hoi_id")
    return float(np.sum(bce_logits(s_g, target))), bce_logits_grad(s_g, target)


def loss_pairwise(S, verbs):
    """
    Multi label BCE of the per verb maximum over the pairs against the image level verbs. The max is differentiated
    through the first maximal pair of each column only.

    :param S: (M, A) interaction logits.
    :param verbs: Iterable of verb ids present in the image.
    :return: (L_p, dL_p / dS).
    """
    S = np.asarray(S, dtype=np.float64)
    s_max = aggregate_scores(S)
    target = _multi_hot(verbs, S.shape[1], "verb id")

    dS = np.zeros_like(S)
    dS[np.argmax(S, axis=0), np.arange(S.shape[1])] = bce_logits_grad(s_max, target)
    return float(np.sum(bce_logits(s_max, target))), dS


def pseudo_labels(S, pair_object_classes, gt_object_classes, gt_verbs, top_k=1):
    """
    Derives binary relatedness targets for the pairs of an image from its own interaction scores.

    A pair is a candidate when its object class is one of the image's ground truth object classes. For every ground
    truth verb the top_k candidates by that verb's score are labelled positive, ties go to the lower pair index.
    Everything else is negative.

    :param S: (M, A) interaction logits.
    :param pair_object_classes: The object class of each of the M pairs.
    :param gt_object_classes: Object classes of the image labels.
    :param gt_verbs: Verbs of the image labels.
    :param top_k: Positives per verb.
    :return: PseudoLabels(B, Z, selected) with selected a dict verb -> chosen pair indices.
    """
    S = np.asarray(S, dtype=np.float64)
    num_pairs, num_verbs = S.shape
    if len(pair_object_classes) != num_pairs:
        raise InvalidArgument("Got %d pair classes for %d pairs" % (len(pair_object_classes), num_pairs))
    if top_k < 1:
        raise InvalidArgument("top_k must be at least 1")

    classes = set(gt_object_classes)
    Z = np.zeros((num_pairs, num_verbs), dtype=np.int64)
    Z[[m for m, c in enumerate(pair_object_classes) if c in classes], :] = 1
    candidates = [m for m in range(num_pairs) if Z[m, 0]]

    B = np.zeros(num_pairs, dtype=np.int64)
    selected = {}
    for verb in sorted(set(gt_verbs)):
        if not 0 <= verb < num_verbs:
            raise InvalidArgument("verb id %s is out of range [0, %d)" % (verb, num_verbs))
        chosen = sorted(candidates, key=lambda m: (-S[m, verb], m))[:top_k]
        selected[verb] = chosen
        B[chosen] = 1

    return PseudoLabels(B, Z, selected)


def loss_relatedness(s_b, B, warmup=False):
    """
    :param s_b: The M relatedness logits.
    :param B: The M pseudo labels.
    :param warmup: During warm-up the loss and its gradient are zero.
    :return: (L_b, dL_b / ds_b).
    """
    s_b = np.asarray(s_b, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if s_b.shape != B.shape:
        raise InvalidArgument("Got %d relatedness logits for %d labels" % (s_b.size, B.size))
    if warmup:
        return 0.0, np.zeros_like(s_b)
    return float(np.sum(bce_logits(s_b, B))), bce_logits_grad(s_b, B)


def loss_regularization(v_p, v_g):
    """
    ||mean(v_p) - v_g||^2, pulls the pooled pair features towards the global feature.

    :return: (L_reg, dL / dv_p, dL / dv_g), zero for an image without pairs.
    """
    v_p = np.asarray(v_p, dtype=np.float64)
    if v_p.shape[0] == 0:
        return 0.0, np.zeros_like(v_p), np.zeros_like(v_g)

    diff = v_p.mean(axis=0) - v_g
    dv_p = np.tile(2.0 * diff / v_p.shape[0], (v_p.shape[0], 1))
    return float(diff @ diff), dv_p, -2.0 * diff


def loss_total(model, fwd, scene, params, config, grads=None, src_active=True, scale=1.0):
    """
    The weighted training objective of one scene, w_g L_g + w_p L_p + w_b L_b + w_reg L_reg.

    :param model: HOIModel that produced fwd.
    :param fwd: SceneForward of the scene.
    :param scene: The SceneRecord supplying the image labels.
    :param params: The parameter dict.
    :param config: TrainConfig with the loss weights and top_k.
    :param grads: Optional gradient dict, accumulated with scale * dL.
    :param src_active: False during the relatedness warm-up.
    :param scale: Multiplier of the gradients, 1 / batch size.
    :return: dict of the METRIC_NAMES terms.
    """
    vocabulary = model.vocabulary
    verbs = scene.gt_verbs(vocabulary)
    metrics = dict.fromkeys(METRIC_NAMES, 0.0)

    metrics["L_g"], ds_g = loss_global(fwd.s_g, scene.image_labels)
    dS = ds_b = dv_p = dv_g = None
    if fwd.num_pairs:
        metrics["L_p"], dS = loss_pairwise(fwd.S, verbs)
        dS = scale * config.w_p * dS

        if config.w_b > 0:
            pair_classes = [scene.proposals[o].object_class for _, o in fwd.pairs]
            labels = pseudo_labels(fwd.S, pair_classes, scene.gt_object_classes(vocabulary), verbs, config.top_k)
            metrics["L_b"], ds_b = loss_relatedness(fwd.s_b, labels.B, warmup=not src_active)
            ds_b = scale * config.w_b * ds_b

    if config.w_reg > 0:
        metrics["L_reg"], dv_p, dv_g = loss_regularization(fwd.v_p, fwd.v_g)
        dv_p, dv_g = scale * config.w_reg * dv_p, scale * config.w_reg * dv_g

    metrics["L"] = (
        config.w_g * metrics["L_g"]
        + config.w_p * metrics["L_p"]
        + config.w_b * metrics["L_b"]
        + config.w_reg * metrics["L_reg"]
    )
    if grads is not None and all(math.isfinite(v) for v in metrics.values()):
        model.backward(fwd, params, grads, ds_g=scale * config.w_g * ds_g, dS=dS, ds_b=ds_b, dv_p=dv_p, dv_g=dv_g)
    return metrics


class ParameterStore(object):
    def __init__(self, params, trainable, lr_backbone=1e-3, lr_heads=1e-3, weight_decay=0.0):
        """
        Named parameter tensors with their Adam moments.

        :param params: dict of name to float64 array, owned by the store afterwards.
        :param trainable: Names that receive updates, the rest stay frozen.
        :param lr_backbone: Learning rate of the visual encoder tensors.
        :param lr_heads: Learning rate of all other tensors.
        :param weight_decay: Decoupled weight decay applied with the learning rate.
        """
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        unknown = set(trainable) - set(self.params)
        if unknown:
            raise InvalidArgument("Unknown trainable parameters %s" % ", ".join(sorted(unknown)))

        self.trainable = sorted(trainable)
        self.lr_backbone = lr_backbone
        self.lr_heads = lr_heads
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {k: np.zeros_like(self.params[k]) for k in self.trainable}
        self._v = {k: np.zeros_like(self.params[k]) for k in self.trainable}

    def zero_grads(self):
        return {k: np.zeros_like(self.params[k]) for k in self.trainable}

    def learning_rate(self, name):
        return self.lr_backbone if name in BACKBONE_PARAMETERS or name in POOL_PARAMETERS else self.lr_heads

    def step(self, grads, lr_scale=1.0):
        """Applies one Adam update, gradients of frozen or missing names are ignored."""
        self.step_count += 1
        t = self.step_count
        for name in self.trainable:
            if name not in grads:
                continue
            g = grads[name]
            if g.shape != self.params[name].shape:
                expected = self.params[name].shape
                raise InvalidArgument("Gradient of %s has shape %s, expected %s" % (name, g.shape, expected))

            self._m[name] = ADAM_BETA1 * self._m[name] + (1.0 - ADAM_BETA1) * g
            self._v[name] = ADAM_BETA2 * self._v[name] + (1.0 - ADAM_BETA2) * g**2
            m_hat = self._m[name] / (1.0 - ADAM_BETA1**t)
            v_hat = self._v[name] / (1.0 - ADAM_BETA2**t)

            lr = self.learning_rate(name) * lr_scale
            if self.weight_decay:
                self.params[name] -= lr * self.weight_decay * self.params[name]
            self.params[name] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)

    def all_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}


def grad_norms(grads):
    return {k: float(np.linalg.norm(v)) for k, v in sorted(grads.items())}


class Trainer(object):
    def __init__(self, dataset, vocabulary, config, model=None):
        """
        Deterministic single threaded training loop.

        :param dataset: List of SceneRecord, must not be empty.
        :param vocabulary: The HOIVocabulary of the dataset.
        :param config: TrainConfig.
        :param model: Optional HOIModel, built from config.model when omitted.
        """
        if not dataset:
            raise InvalidArgument("Cannot train on an empty dataset")
        self.dataset = list(dataset)
        self.vocabulary = vocabulary
        self.config = config
        self.model = model or HOIModel(config.model, vocabulary)
        self._pixels = {}

    def pixels(self, scene):
        if scene.image_id not in self._pixels:
            self._pixels[scene.image_id] = scene_pixels(scene, self.vocabulary.num_verbs)
        return self._pixels[scene.image_id]

    def init_store(self, rng, params=None):
        params = params if params is not None else self.model.init_params(rng)
        self.model.check_params(params)
        cfg = self.config
        return ParameterStore(
            params,
            self.model.trainable_names(params),
            lr_backbone=cfg.lr_backbone,
            lr_heads=cfg.lr_heads,
            weight_decay=cfg.weight_decay,
        )

    def _lr_scale(self, iteration):
        cfg = self.config
        if not cfg.lr_decay_step:
            return 1.0
        return cfg.lr_decay_factor ** (iteration // cfg.lr_decay_step)

    def run(self, params=None, callback=None):
        """
        Trains for config.iterations steps.

        :param params: Optional initial parameters, drawn from the seed when omitted.
        :param callback: Optional callable(iteration, metrics, store) invoked after every step.
        :return: (ParameterStore, list of per iteration metric dicts).
        """
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        store = self.init_store(rng, params=params)
        warmup = cfg.warmup_iterations
        log.info(
            "Training %d iterations on %d scenes, relatedness warm-up %d iterations"
            % (cfg.iterations, len(self.dataset), warmup)
        )

        order = []
        history = []
        for iteration in range(cfg.iterations):
            batch = []
            while len(batch) < cfg.batch_size:
                if not order:
                    order = list(rng.permutation(len(self.dataset)))
                batch.append(self.dataset[order.pop(0)])

            grads = store.zero_grads()
            metrics = dict.fromkeys(METRIC_NAMES, 0.0)
            scale = 1.0 / len(batch)
            for scene in batch:
                fwd = self.model.forward_scene(scene, store.params, pixels=self.pixels(scene))
                terms = loss_total(
                    self.model, fwd, scene, store.params, cfg, grads=grads, src_active=iteration >= warmup, scale=scale
                )
                for name in METRIC_NAMES:
                    metrics[name] += scale * terms[name]

            batch_id = ",".join(s.image_id for s in batch)
            if not all(math.isfinite(v) for v in metrics.values()):
                raise TrainingDiverged(iteration, batch_id, {"losses": metrics, "grad_norms": grad_norms(grads)})

            store.step(grads, lr_scale=self._lr_scale(iteration))
            if not store.all_finite():
                raise TrainingDiverged(iteration, batch_id, {"losses": metrics, "grad_norms": grad_norms(grads)})

            metrics["iteration"] = iteration
            history.append(metrics)
            log.debug("Iteration %d batch %s: %s" % (iteration, batch_id, _format_metrics(metrics)))
            if (iteration + 1) % cfg.log_every == 0:
                log.info("Iteration %d/%d: %s" % (iteration + 1, cfg.iterations, _format_metrics(metrics)))
            if callback:
                callback(iteration, metrics, store)

        log.info("Training finished after %d iterations" % cfg.iterations)
        return store, history


def _format_metrics(metrics):
    return " ".join("%s=%.4f" % (name, metrics[name]) for name in METRIC_NAMES)


def train(dataset, vocabulary, config, model=None, params=None, callback=None):
    """
    Trains a model on the dataset.

    :return: (ParameterStore, metrics history).
    """
    return Trainer(dataset, vocabulary, config, model=model).run(params=params, callback=callback)
