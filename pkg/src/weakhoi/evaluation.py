# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import collections
import logging

import numpy as np

from weakhoi.data import rare_split
from weakhoi.exceptions import InvalidArgument
from weakhoi.geometry import iou

log = logging.getLogger(__name__)

IOU_THRESHOLD = 0.5


class Protocol(object):
    """
    CORRECT scores every detection. FLAWED first drops the detections of HOI classes that are not annotated in the
    image, which hides most false positives and inflates the mAP. It is kept to demonstrate that effect.
    """

    CORRECT = "correct"
    FLAWED = "flawed"

    ALL = (CORRECT, FLAWED)


ClassResult = collections.namedtuple(
    "ClassResult", ["hoi_id", "ap", "gt_count", "num_detections", "recall", "precision"]
)


class EvalResult(
    collections.namedtuple("EvalResult", ["protocol", "per_class", "mAP_full", "mAP_rare", "mAP_nonrare", "rare"])
):
    """per_class maps hoi_id to ClassResult for every class with at least one ground truth instance."""

    __slots__ = ()

    def to_dict(self):
        return {
            "protocol": self.protocol,
            "per_class": [
                {"hoi_id": r.hoi_id, "ap": r.ap, "gt_count": r.gt_count, "rare": r.hoi_id in self.rare}
                for r in sorted(self.per_class.values(), key=lambda r: r.hoi_id)
            ],
            "mAP_full": self.mAP_full,
            "mAP_rare": self.mAP_rare,
            "mAP_nonrare": self.mAP_nonrare,
        }


def ranking_key(detection):
    return -detection.score_R, detection.image_id, detection.pair_index


def precision_recall(tp, num_gt):
    """Cumulative (recall, precision) after each ranked detection."""
    tp = np.asarray(tp, dtype=np.float64)
    tp_sum = np.cumsum(tp)
    fp_sum = np.cumsum(1.0 - tp)
    recall = tp_sum / num_gt
    precision = tp_sum / np.maximum(tp_sum + fp_sum, np.finfo(np.float64).tiny)
    return recall, precision


def average_precision(tp, num_gt):
    """
    All-point interpolated AP of a ranked list: the area under the monotone precision envelope over recall.

    :param tp: 1/0 flags of the ranked detections.
    :param num_gt: Number of ground truth instances, the class is excluded (None) when 0.
    :return: AP in [0, 1] or None.
    """
    if num_gt == 0:
        return None
    if len(tp) == 0:
        return 0.0

    recall, precision = precision_recall(tp, num_gt)
    recall = np.concatenate([[0.0], recall, [recall[-1]]])
    precision = np.concatenate([[1.0], precision, [0.0]])
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])

    steps = np.nonzero(recall[1:] != recall[:-1])[0] + 1
    return float(np.sum((recall[steps] - recall[steps - 1]) * precision[steps]))


def match_detections(detections, gt_instances):
    """
    Greedy matching in rank order. A detection is a true positive when an unmatched ground truth of its image has
    both a human and an object IoU of at least 0.5, the candidate with the highest min(IoU_h, IoU_o) is consumed.

    :param detections: Detections of one class, already ranked.
    :param gt_instances: List of (image_id, human_box, object_box) of the same class.
    :return: List of 1/0 flags aligned with detections.
    """
    by_image = collections.defaultdict(list)
    for index, (image_id, _, _) in enumerate(gt_instances):
        by_image[image_id].append(index)

    used = set()
    flags = []
    for det in detections:
        best, best_quality = None, -1.0
        for index in by_image.get(det.image_id, []):
            if index in used:
                continue
            _, human_box, object_box = gt_instances[index]
            quality = min(iou(det.human_box, human_box), iou(det.object_box, object_box))
            if quality >= IOU_THRESHOLD and quality > best_quality:
                best, best_quality = index, quality

        if best is None:
            flags.append(0)
        else:
            used.add(best)
            flags.append(1)
    return flags


def match_and_ap(detections, gt_instances):
    """
    AP of one HOI class.

    :param detections: Detections of the class, ranked here by score then image id then pair index.
    :param gt_instances: List of (image_id, human_box, object_box) of the class.
    :return: (AP or None when there is no ground truth, ranked TP flags).
    """
    ranked = sorted(detections, key=ranking_key)
    flags = match_detections(ranked, gt_instances)
    return average_precision(flags, len(gt_instances)), flags


def _mean(values):
    return float(np.mean(values)) if values else 0.0


def evaluate(detections, dataset, vocabulary, protocol=Protocol.CORRECT, train_dataset=None):
    """
    Computes the per class AP and the full, rare and non-rare mAP of a detection set.

    :param detections: Iterable of Detection.
    :param dataset: The evaluated list of SceneRecord.
    :param vocabulary: HOIVocabulary.
    :param protocol: A Protocol value.
    :param train_dataset: Scenes that define the rare split, defaults to the evaluated dataset.
    :return: EvalResult.
    """
    if protocol not in Protocol.ALL:
        raise InvalidArgument("Unknown evaluation protocol '%s'" % protocol)

    scenes = {s.image_id: s for s in dataset}
    gt_by_class = collections.defaultdict(list)
    for scene in dataset:
        for gt in scene.gt_instances:
            hoi_id = vocabulary.hoi_index(gt.verb, gt.object_class)
            if hoi_id is not None:
                gt_by_class[hoi_id].append((scene.image_id, gt.human_box, gt.object_box))

    det_by_class = collections.defaultdict(list)
    dropped = 0
    for det in detections:
        scene = scenes.get(det.image_id)
        if scene is None:
            raise InvalidArgument("Detection references unknown image id '%s'" % det.image_id)
        hoi_id = vocabulary.hoi_index(det.verb, det.object_class)
        if hoi_id is None:
            log.warning("Ignoring detection of invalid combination verb %d object %d" % (det.verb, det.object_class))
            continue
        if protocol == Protocol.FLAWED and hoi_id not in scene.image_labels:
            dropped += 1
            continue
        det_by_class[hoi_id].append(det)

    if protocol == Protocol.FLAWED:
        log.info("Flawed protocol dropped %d detections of classes absent from their image" % dropped)

    per_class = {}
    for hoi_id in range(vocabulary.num_combos):
        gts = gt_by_class.get(hoi_id, [])
        if not gts:
            continue
        ap, flags = match_and_ap(det_by_class.get(hoi_id, []), gts)
        recall, precision = precision_recall(flags, len(gts)) if flags else (np.zeros(0), np.zeros(0))
        per_class[hoi_id] = ClassResult(hoi_id, ap, len(gts), len(flags), recall, precision)

    rare, _ = rare_split(train_dataset if train_dataset is not None else dataset, vocabulary)
    rare = frozenset(rare)
    result = EvalResult(
        protocol=protocol,
        per_class=per_class,
        mAP_full=_mean([r.ap for r in per_class.values()]),
        mAP_rare=_mean([r.ap for h, r in per_class.items() if h in rare]),
        mAP_nonrare=_mean([r.ap for h, r in per_class.items() if h not in rare]),
        rare=rare,
    )
    log.info(
        "%s protocol: mAP full %.4f rare %.4f non-rare %.4f over %d classes"
        % (protocol, result.mAP_full, result.mAP_rare, result.mAP_nonrare, len(per_class))
    )
    return result
