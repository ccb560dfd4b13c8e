# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import collections
import logging

import numpy as np

from weakhoi.data import GTInstance, PixelMode, PixelSource, Proposal, ProposalKind, SceneRecord
from weakhoi.exceptions import GradientCheckFailed, InvalidArgument
from weakhoi.geometry import Box
from weakhoi.learning import TrainConfig, loss_total
from weakhoi.model import HOIModel

log = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
ERROR_FLOOR = 1e-8

# passed is decided on the tensor level errors, entry_errors only reports the worst single entry of each tensor.
GradCheckReport = collections.namedtuple(
    "GradCheckReport",
    ["errors", "worst_parameter", "max_error", "tolerance", "passed", "entry_errors", "max_entry_error"],
    defaults=(None, 0.0),
)


def relative_error(analytic, numeric):
    """||analytic - numeric|| / (||numeric|| + 1e-8) over a whole tensor."""
    return float(np.linalg.norm(analytic - numeric) / (np.linalg.norm(numeric) + ERROR_FLOOR))


def max_entry_error(analytic, numeric):
    """The worst |analytic - numeric| / (|numeric| + 1e-8) over the entries of a tensor, 0 for an empty one."""
    analytic, numeric = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + ERROR_FLOOR)))


def random_scene(rng, vocabulary, image_size=(16, 16), num_humans=2, num_objects=2):
    """
    A small scene with random pixels for gradient checks, the proposals are random boxes and the image labels a
    random non-empty subset of the combinations of the proposed object classes.

    :return: (SceneRecord, pixels).
    """
    height, width = image_size

    def box():
        w, h = rng.uniform(3.0, width / 2.0), rng.uniform(3.0, height / 2.0)
        x1, y1 = rng.uniform(0.0, width - w), rng.uniform(0.0, height - h)
        return Box(x1, y1, x1 + w, y1 + h)

    object_classes = sorted({c.object_id for c in vocabulary.combos})
    proposals = [Proposal(box(), ProposalKind.HUMAN, None, rng.uniform(0.5, 1.0)) for _ in range(num_humans)]
    for _ in range(num_objects):
        object_class = object_classes[int(rng.integers(len(object_classes)))]
        proposals.append(Proposal(box(), ProposalKind.OBJECT, object_class, rng.uniform(0.5, 1.0)))

    candidates = []
    for h, o in _pairs(proposals):
        candidates.extend((h, o, hoi) for _, hoi in vocabulary.verbs_for_object(proposals[o].object_class))

    chosen = [candidates[i] for i in sorted(set(rng.choice(len(candidates), size=2)))]
    labels = sorted({hoi for _, _, hoi in chosen})
    gt_instances = []
    for h, o, hoi in chosen:
        combo = vocabulary.combo(hoi)
        gt_instances.append(GTInstance(proposals[h].box, proposals[o].box, combo.object_id, combo.verb_id))

    scene = SceneRecord(
        image_id="gradcheck",
        width=width,
        height=height,
        pixels=PixelSource(PixelMode.SEED, 0),
        proposals=tuple(proposals),
        image_labels=tuple(labels),
        gt_instances=tuple(gt_instances),
    )
    return scene, rng.uniform(0.0, 1.0, size=(height, width, 3))


def _pairs(proposals):
    humans = [i for i, p in enumerate(proposals) if p.kind == ProposalKind.HUMAN]
    objects = [i for i, p in enumerate(proposals) if p.kind == ProposalKind.OBJECT]
    return [(h, o) for h in humans for o in objects]


def scene_loss(model, params, scene, pixels, config):
    fwd = model.forward(pixels, scene.proposals, params, image_id=scene.image_id)
    return loss_total(model, fwd, scene, params, config, grads=None, src_active=True)["L"]


def analytic_gradients(model, params, scene, pixels, config, names):
    grads = {name: np.zeros_like(params[name]) for name in names}
    fwd = model.forward(pixels, scene.proposals, params, image_id=scene.image_id)
    loss_total(model, fwd, scene, params, config, grads=grads, src_active=True)
    return grads


def numeric_gradient(model, params, scene, pixels, config, name, step=DEFAULT_STEP, indices=None):
    """
    Central differences of the scene loss w.r.t. one tensor.

    :param indices: Optional flat indices to perturb, the others are left at 0.
    """
    tensor = params[name] = np.ascontiguousarray(params[name])
    flat = tensor.reshape(-1)
    numeric = np.zeros(flat.size)
    for i in range(flat.size) if indices is None else indices:
        original = flat[i]
        flat[i] = original + step
        plus = scene_loss(model, params, scene, pixels, config)
        flat[i] = original - step
        minus = scene_loss(model, params, scene, pixels, config)
        flat[i] = original
        numeric[i] = (plus - minus) / (2.0 * step)
    return numeric.reshape(tensor.shape)


def check_gradients(
    model,
    params,
    scene,
    pixels,
    config=None,
    step=DEFAULT_STEP,
    tolerance=DEFAULT_TOLERANCE,
    sample=None,
    rng=None,
    raise_on_failure=False,
):
    """
    Compares the analytic gradient of the full training loss with central finite differences for every trainable
    tensor. The pair branch is attached to the knowledge bank for the check since a detached bank has a
    deliberately partial analytic gradient.

    :param model: HOIModel.
    :param params: Parameter dict, perturbed in place and restored.
    :param scene: SceneRecord with the labels.
    :param pixels: The (H, W, 3) pixels of the scene.
    :param config: TrainConfig with the loss weights, defaults to all terms active plus the feature regulariser.
    :param step: Finite difference step h.
    :param tolerance: Maximum accepted relative error per tensor.
    :param sample: When set only this many random entries per tensor are compared.
    :param rng: numpy Generator used for sampling.
    :param raise_on_failure: Raise GradientCheckFailed instead of returning a failing report.
    :return: GradCheckReport.
    """
    config = config or TrainConfig(w_reg=1.0)
    if sample is not None and sample < 1:
        raise InvalidArgument("sample must be positive")
    if model.config.local_detached:
        model = HOIModel(
            model.config.copy(local_detached=False),
            model.vocabulary,
            visual_encoder=model.visual_encoder,
            text_encoder=model.text_encoder,
        )

    rng = rng or np.random.default_rng(0)
    names = model.trainable_names(params)
    analytic = analytic_gradients(model, params, scene, pixels, config, names)

    errors = {}
    entry_errors = {}
    for name in names:
        indices = None
        if sample is not None and params[name].size > sample:
            indices = np.sort(rng.choice(params[name].size, size=sample, replace=False))
        numeric = numeric_gradient(model, params, scene, pixels, config, name, step=step, indices=indices)

        compared = analytic[name].reshape(-1)
        if indices is not None:
            compared = compared[indices]
            numeric = numeric.reshape(-1)[indices]
        errors[name] = relative_error(compared.reshape(-1), numeric.reshape(-1))
        entry_errors[name] = max_entry_error(compared.reshape(-1), numeric.reshape(-1))
        log.debug(
            "Gradient check %s: relative error %.3e, worst entry %.3e" % (name, errors[name], entry_errors[name])
        )

    worst = max(errors, key=lambda n: errors[n]) if errors else None
    max_error = errors[worst] if worst else 0.0
    max_entry = max(entry_errors.values()) if entry_errors else 0.0
    report = GradCheckReport(errors, worst, max_error, tolerance, max_error < tolerance, entry_errors, max_entry)
    log.info(
        "Gradient check over %d tensors, worst %s at %.3e, worst single entry %.3e"
        % (len(errors), worst, max_error, max_entry)
    )
    if raise_on_failure and not report.passed:
        raise GradientCheckFailed(worst, max_error, tolerance)
    return report
