# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

"""
Synthetic HOI scenes.

Every scene is a small RGB image with human and object rectangles. Each ground truth interaction paints a striped
texture, tinted with a colour keyed by its verb, into the union box of the pair before the two boxes are drawn on top,
so the verb is only visible in the corridor between the human and the object. The stripes alone average out to the same
grey for every verb, the tint is what keeps the verb visible after pooling. Object colours are keyed by class.
Proposals are the ground truth boxes with jitter plus low scoring distractors.
"""

import collections
import colorsys
import json
import logging
import math

import numpy as np

from weakhoi.config import BaseConfig
from weakhoi.exceptions import DatasetParseError, GenerationError, InvalidArgument
from weakhoi.geometry import Box, iou, union_box
from weakhoi.vocab import Combo, HOIVocabulary, ObjectEntry, RoleTag, VerbEntry

log = logging.getLogger(__name__)

HUMAN_COLOR = (0.92, 0.76, 0.62)
GOLDEN_RATIO_CONJUGATE = 0.618033988749895
PLACEMENT_RETRIES = 200
LAYOUT_RESTARTS = 20

# brightness of the dark stripes in an interaction corridor, relative to the verb tint
CORRIDOR_DARK = 0.4

GT_SCORE_RANGE = (0.7, 1.0)
DISTRACTOR_SCORE_RANGE = (0.1, 0.5)

# (name, gerund, role)
VERB_CATALOGUE = (
    ("ride", "riding", RoleTag.OBJECT),
    ("hold", "holding", RoleTag.OBJECT),
    ("carry", "carrying", RoleTag.OBJECT),
    ("cut", "cutting", RoleTag.INSTRUMENT),
    ("eat", "eating", RoleTag.OBJECT),
    ("throw", "throwing", RoleTag.OBJECT),
    ("kick", "kicking", RoleTag.OBJECT),
    ("push", "pushing", RoleTag.OBJECT),
    ("wash", "washing", RoleTag.OBJECT),
    ("feed", "feeding", RoleTag.OBJECT),
    ("hit", "hitting", RoleTag.INSTRUMENT),
    ("inspect", "inspecting", RoleTag.OBJECT),
    ("repair", "repairing", RoleTag.OBJECT),
    ("write", "writing", RoleTag.INSTRUMENT),
    ("fly", "flying", RoleTag.OBJECT),
    ("open", "opening", RoleTag.OBJECT),
)

OBJECT_CATALOGUE = (
    "bicycle",
    "apple",
    "umbrella",
    "knife",
    "horse",
    "ball",
    "car",
    "book",
    "cup",
    "kite",
    "oven",
    "orange",
    "pizza",
    "skateboard",
    "elephant",
    "racket",
)


class ProposalKind(object):
    HUMAN = "human"
    OBJECT = "object"


class PixelMode(object):
    SEED = "seed"
    PATH = "path"


PixelSource = collections.namedtuple("PixelSource", ["mode", "value"])
GTInstance = collections.namedtuple("GTInstance", ["human_box", "object_box", "object_class", "verb"])


class Proposal(collections.namedtuple("Proposal", ["box", "kind", "object_class", "score"])):
    """A detector box, object_class is None for humans."""

    __slots__ = ()

    def __new__(cls, box, kind, object_class=None, score=1.0):
        if kind not in (ProposalKind.HUMAN, ProposalKind.OBJECT):
            raise InvalidArgument("Unknown proposal kind '%s'" % kind)
        if kind == ProposalKind.OBJECT and object_class is None:
            raise InvalidArgument("Object proposals need an object class")
        if not 0.0 <= score <= 1.0:
            raise InvalidArgument("Proposal score %s is outside [0, 1]" % score)
        object_class = None if kind == ProposalKind.HUMAN else int(object_class)
        return super(Proposal, cls).__new__(cls, box, kind, object_class, float(score))


class SceneRecord(
    collections.namedtuple(
        "SceneRecord", ["image_id", "width", "height", "pixels", "proposals", "image_labels", "gt_instances"]
    )
):
    __slots__ = ()

    @property
    def humans(self):
        return [(i, p) for i, p in enumerate(self.proposals) if p.kind == ProposalKind.HUMAN]

    @property
    def objects(self):
        return [(i, p) for i, p in enumerate(self.proposals) if p.kind == ProposalKind.OBJECT]

    def gt_object_classes(self, vocabulary):
        return sorted({vocabulary.combo(h).object_id for h in self.image_labels})

    def gt_verbs(self, vocabulary):
        return sorted({vocabulary.combo(h).verb_id for h in self.image_labels})

    def to_dict(self):
        return {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "pixels": {"mode": self.pixels.mode, "value": self.pixels.value},
            "proposals": [
                {"box": p.box.to_list(), "kind": p.kind, "class": p.object_class, "score": p.score}
                for p in self.proposals
            ],
            "image_labels": list(self.image_labels),
            "gt_instances": [
                {
                    "human_box": g.human_box.to_list(),
                    "object_box": g.object_box.to_list(),
                    "object_class": g.object_class,
                    "verb": g.verb,
                }
                for g in self.gt_instances
            ],
        }

    @classmethod
    def from_dict(cls, data):
        pixels = data["pixels"]
        if pixels["mode"] not in (PixelMode.SEED, PixelMode.PATH):
            raise InvalidArgument("Unknown pixel mode '%s'" % pixels["mode"])

        record = cls(
            image_id=str(data["image_id"]),
            width=int(data["width"]),
            height=int(data["height"]),
            pixels=PixelSource(pixels["mode"], pixels["value"]),
            proposals=tuple(
                Proposal(Box.from_list(p["box"]), p["kind"], p.get("class"), p["score"]) for p in data["proposals"]
            ),
            image_labels=tuple(sorted(int(h) for h in data["image_labels"])),
            gt_instances=tuple(
                GTInstance(
                    Box.from_list(g["human_box"]),
                    Box.from_list(g["object_box"]),
                    int(g["object_class"]),
                    int(g["verb"]),
                )
                for g in data.get("gt_instances", [])
            ),
        )
        for gt in record.gt_instances:
            size = (record.width, record.height)
            if not (gt.human_box.inside(*size) and gt.object_box.inside(*size)):
                raise InvalidArgument("Ground truth boxes of %s lie outside the image" % record.image_id)
        return record


class GenSpec(BaseConfig):
    """Settings of the synthetic scene generator.

    Attributes:
        seed (int): Root seed, every image derives its own stream from it.
        num_images (int): The number of scenes.
        image_size (Tuple[int, int]): (height, width), divisible by patch_size.
        patch_size (int): The encoder patch size the images are made for.
        num_verbs (int): A, taken from the front of the verb catalogue.
        num_objects (int): C, taken from the front of the object catalogue.
        num_combos (int): N valid (verb, object) combinations, at most A * C.
        instances (Tuple[int, int]): Inclusive range of interactions per image.
        jitter (float): Proposal jitter as a fraction of the box size.
        distractors (int): Extra low scoring proposals per image.
        skew (float): Class frequencies follow (hoi_id + 1) ** -skew, 0 is uniform.
        rare_threshold (int): Stored with the vocabulary for the rare split.
    """

    _defaults = {
        "seed": 0,
        "num_images": 200,
        "image_size": (64, 64),
        "patch_size": 8,
        "num_verbs": 6,
        "num_objects": 5,
        "num_combos": 12,
        "instances": (1, 3),
        "jitter": 0.05,
        "distractors": 1,
        "skew": 0.0,
        "rare_threshold": 10,
    }

    def _validate(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.instances = tuple(int(v) for v in self.instances)
        height, width = self.image_size
        if self.patch_size < 1 or height % self.patch_size or width % self.patch_size:
            raise InvalidArgument("Image size %dx%d is not divisible by patch %d" % (height, width, self.patch_size))
        if min(height, width) < 32:
            raise InvalidArgument("Images must be at least 32x32 pixels")
        if self.num_images < 0:
            raise InvalidArgument("num_images must not be negative")
        if not 1 <= self.num_verbs <= len(VERB_CATALOGUE):
            raise InvalidArgument("num_verbs must be in [1, %d]" % len(VERB_CATALOGUE))
        if not 1 <= self.num_objects <= len(OBJECT_CATALOGUE):
            raise InvalidArgument("num_objects must be in [1, %d]" % len(OBJECT_CATALOGUE))
        if not 1 <= self.num_combos <= self.num_verbs * self.num_objects:
            raise InvalidArgument("num_combos must be in [1, A * C]")
        if len(self.instances) != 2 or not 1 <= self.instances[0] <= self.instances[1]:
            raise InvalidArgument("instances must be a (min, max) range with 1 <= min <= max")
        if not 0.0 <= self.jitter < 0.5:
            raise InvalidArgument("jitter must be in [0, 0.5)")
        if self.distractors < 0 or self.skew < 0 or self.rare_threshold < 0:
            raise InvalidArgument("distractors, skew and rare_threshold must not be negative")


def _stream(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + list(keys)))


def build_vocabulary(spec):
    """
    Builds the label space of a synthetic dataset: the first A verbs and C objects of the catalogues and N
    combinations drawn with the generator seed. hoi_ids follow (verb, object) order.
    """
    rng = _stream(spec.seed, 1)
    verbs = [VerbEntry(i, name, gerund) for i, (name, gerund, _) in enumerate(VERB_CATALOGUE[: spec.num_verbs])]
    objects = [ObjectEntry(i, name) for i, name in enumerate(OBJECT_CATALOGUE[: spec.num_objects])]

    cells = rng.permutation(spec.num_verbs * spec.num_objects)[: spec.num_combos]
    pairs = sorted(divmod(int(c), spec.num_objects) for c in cells)
    combos = [Combo(i, v, o, VERB_CATALOGUE[v][2]) for i, (v, o) in enumerate(pairs)]
    return HOIVocabulary(verbs, objects, combos, rare_threshold=spec.rare_threshold)


def class_probabilities(num_combos, skew):
    weights = np.arange(1, num_combos + 1, dtype=np.float64) ** -float(skew)
    return weights / weights.sum()


def _random_box(rng, width, height, size_range_w, size_range_h):
    w = rng.uniform(*size_range_w)
    h = rng.uniform(*size_range_h)
    x1 = rng.uniform(0, width - w)
    y1 = rng.uniform(0, height - h)
    return Box(x1, y1, x1 + w, y1 + h)


def _place_pair(rng, width, height, placed):
    scale = min(width, height) / 64.0
    for _ in range(PLACEMENT_RETRIES):
        human = _random_box(rng, width, height, (10 * scale, 18 * scale), (18 * scale, 30 * scale))
        ow, oh = rng.uniform(8 * scale, 14 * scale), rng.uniform(8 * scale, 14 * scale)
        gap = rng.uniform(4 * scale, 10 * scale)
        side = rng.integers(4)
        hcx, hcy = human.center
        if side == 0:
            ox, oy = human.x2 + gap, hcy - oh / 2.0
        elif side == 1:
            ox, oy = human.x1 - gap - ow, hcy - oh / 2.0
        elif side == 2:
            ox, oy = hcx - ow / 2.0, human.y2 + gap
        else:
            ox, oy = hcx - ow / 2.0, human.y1 - gap - oh
        oy += rng.uniform(-0.25, 0.25) * human.height

        if ox < 0 or oy < 0 or ox + ow > width or oy + oh > height:
            continue
        obj = Box(ox, oy, ox + ow, oy + oh)
        if any(iou(human, h) > 0.2 or iou(obj, o) > 0.2 or iou(human, o) > 0 or iou(obj, h) > 0 for h, o in placed):
            continue
        return human, obj
    return None


def jitter_box(rng, box, magnitude, width, height):
    """Moves each coordinate by up to magnitude times the box size and clamps the result into the image."""
    if magnitude == 0:
        return box
    dx = rng.uniform(-magnitude, magnitude, size=2) * box.width
    dy = rng.uniform(-magnitude, magnitude, size=2) * box.height
    try:
        jittered = Box(box.x1 + dx[0], box.y1 + dy[0], box.x2 + dx[1], box.y2 + dy[1]).clamp(width, height)
    except InvalidArgument:
        jittered = None
    return jittered or box


def _layout(rng, spec, vocabulary, probs, count):
    """Places count interacting pairs, a late pair that does not fit discards the whole layout and starts over."""
    height, width = spec.image_size
    for restart in range(LAYOUT_RESTARTS):
        placed = []
        instances = []
        for _ in range(count):
            pair = _place_pair(rng, width, height, placed)
            if pair is None:
                break
            placed.append(pair)
            combo = vocabulary.combo(int(rng.choice(vocabulary.num_combos, p=probs)))
            instances.append(GTInstance(pair[0], pair[1], combo.object_id, combo.verb_id))
        else:
            return instances
        log.debug("Restarting the layout of %d pairs in a %dx%d image, try %d" % (count, width, height, restart + 2))

    raise GenerationError(
        "Could not place %d human-object pairs in a %dx%d image after %d layouts of %d attempts each"
        % (count, width, height, LAYOUT_RESTARTS, PLACEMENT_RETRIES)
    )


def generate_scene(spec, vocabulary, index):
    rng = _stream(spec.seed, 0, index)
    height, width = spec.image_size
    probs = class_probabilities(vocabulary.num_combos, spec.skew)

    count = int(rng.integers(spec.instances[0], spec.instances[1] + 1))
    instances = _layout(rng, spec, vocabulary, probs, count)

    proposals = []
    for gt in instances:
        proposals.append(
            Proposal(
                jitter_box(rng, gt.human_box, spec.jitter, width, height),
                ProposalKind.HUMAN,
                None,
                rng.uniform(*GT_SCORE_RANGE),
            )
        )
        proposals.append(
            Proposal(
                jitter_box(rng, gt.object_box, spec.jitter, width, height),
                ProposalKind.OBJECT,
                gt.object_class,
                rng.uniform(*GT_SCORE_RANGE),
            )
        )

    scale = min(width, height) / 64.0
    for _ in range(spec.distractors):
        if rng.random() < 0.5:
            box = _random_box(rng, width, height, (10 * scale, 18 * scale), (18 * scale, 30 * scale))
            proposals.append(Proposal(box, ProposalKind.HUMAN, None, rng.uniform(*DISTRACTOR_SCORE_RANGE)))
        else:
            box = _random_box(rng, width, height, (8 * scale, 14 * scale), (8 * scale, 14 * scale))
            object_class = int(rng.integers(vocabulary.num_objects))
            proposals.append(Proposal(box, ProposalKind.OBJECT, object_class, rng.uniform(*DISTRACTOR_SCORE_RANGE)))

    pixel_seed = int(np.random.SeedSequence([int(spec.seed), 2, index]).generate_state(1)[0])
    labels = sorted({vocabulary.hoi_index(gt.verb, gt.object_class) for gt in instances})
    return SceneRecord(
        image_id="%06d" % index,
        width=width,
        height=height,
        pixels=PixelSource(PixelMode.SEED, pixel_seed),
        proposals=tuple(proposals),
        image_labels=tuple(labels),
        gt_instances=tuple(instances),
    )


def generate(spec, vocabulary=None):
    """
    Generates a synthetic dataset.

    :param spec: The GenSpec.
    :param vocabulary: Optional HOIVocabulary, defaults to build_vocabulary(spec).
    :return: (vocabulary, list of SceneRecord).
    """
    vocabulary = vocabulary or build_vocabulary(spec)
    log.info("Generating %d synthetic scenes with seed %d" % (spec.num_images, spec.seed))
    dataset = [generate_scene(spec, vocabulary, i) for i in range(spec.num_images)]
    return vocabulary, dataset


def object_color(object_class):
    hue = (object_class * GOLDEN_RATIO_CONJUGATE) % 1.0
    return colorsys.hsv_to_rgb(hue, 0.8, 0.9)


def verb_color(verb, num_verbs):
    """Hues are spread evenly over the verbs and offset by half a step from red."""
    hue = (verb + 0.5) / max(num_verbs, 1)
    return colorsys.hsv_to_rgb(hue % 1.0, 0.7, 1.0)


def verb_texture(verb, num_verbs, height, width):
    """A binary stripe pattern, the angle and the period are keyed by the verb."""
    angle = math.pi * verb / max(num_verbs, 1)
    period = 3.0 + 2.0 * (verb % 3)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    phase = (xs * math.cos(angle) + ys * math.sin(angle)) / period
    return (np.sin(2.0 * math.pi * phase) >= 0).astype(np.float64)


def _box_slice(box):
    return (
        slice(int(math.floor(box.y1)), int(math.ceil(box.y2))),
        slice(int(math.floor(box.x1)), int(math.ceil(box.x2))),
    )


def render_scene(record, num_verbs):
    """
    Renders the pixels of a seed mode scene.

    :param record: The SceneRecord.
    :param num_verbs: A, used to spread the stripe angles and the tints.
    :return: numpy array (H, W, 3) with values in [0, 1].
    """
    rng = np.random.default_rng(int(record.pixels.value))
    pixels = rng.uniform(0.0, 0.25, size=(record.height, record.width, 3))
    for gt in record.gt_instances:
        rows, cols = _box_slice(union_box(gt.human_box, gt.object_box))
        stripes = verb_texture(gt.verb, num_verbs, record.height, record.width)[rows, cols]
        tint = np.asarray(verb_color(gt.verb, num_verbs))
        pixels[rows, cols, :] = (CORRIDOR_DARK + (1.0 - CORRIDOR_DARK) * stripes)[:, :, None] * tint

    for gt in record.gt_instances:
        pixels[_box_slice(gt.human_box)] = HUMAN_COLOR
        pixels[_box_slice(gt.object_box)] = object_color(gt.object_class)
    return pixels


def scene_pixels(record, num_verbs):
    """Returns the (H, W, 3) float64 pixels of a scene from its seed or from a .npy file."""
    if record.pixels.mode == PixelMode.SEED:
        return render_scene(record, num_verbs)

    pixels = np.load(record.pixels.value).astype(np.float64)
    if pixels.shape != (record.height, record.width, 3):
        raise InvalidArgument(
            "Pixels in %s have shape %s, expected %s"
            % (record.pixels.value, pixels.shape, (record.height, record.width, 3))
        )
    return pixels


def save_dataset(dataset, path):
    with open(path, mode="w", encoding="utf-8") as fd:
        for record in dataset:
            fd.write(json.dumps(record.to_dict(), sort_keys=True))
            fd.write("\n")
    log.info("Wrote %d scenes to %s" % (len(dataset), path))


def load_dataset(path):
    """
    Reads a JSON lines dataset, blank lines are skipped.

    :param path: The file to read.
    :return: list of SceneRecord.
    """
    dataset = []
    with open(path, mode="r", encoding="utf-8") as fd:
        for line_number, line in enumerate(fd, start=1):
            if not line.strip():
                continue
            try:
                dataset.append(SceneRecord.from_dict(json.loads(line)))
            except KeyError as err:
                raise DatasetParseError("missing field %s" % err, path, line_number) from err
            except (TypeError, ValueError, AttributeError) as err:
                raise DatasetParseError(str(err), path, line_number) from err

    log.debug("Loaded %d scenes from %s" % (len(dataset), path))
    return dataset


def class_counts(dataset, vocabulary):
    """Number of ground truth instances per hoi_id."""
    counts = np.zeros(vocabulary.num_combos, dtype=np.int64)
    for record in dataset:
        for gt in record.gt_instances:
            hoi_id = vocabulary.hoi_index(gt.verb, gt.object_class)
            if hoi_id is None:
                log.warning("Scene %s has an instance outside the vocabulary" % record.image_id)
                continue
            counts[hoi_id] += 1
    return counts


def rare_split(dataset, vocabulary):
    """
    Splits the HOI classes by training frequency.

    :return: (rare hoi_ids, non_rare hoi_ids), classes with fewer than vocabulary.rare_threshold instances are rare.
    """
    counts = class_counts(dataset, vocabulary)
    rare = [i for i in range(vocabulary.num_combos) if counts[i] < vocabulary.rare_threshold]
    non_rare = [i for i in range(vocabulary.num_combos) if counts[i] >= vocabulary.rare_threshold]
    return rare, non_rare


def generation_manifest(spec, vocabulary, dataset):
    counts = class_counts(dataset, vocabulary)
    rare, non_rare = rare_split(dataset, vocabulary)
    return {
        "spec": spec.to_dict(),
        "vocabulary_fingerprint": vocabulary.fingerprint(),
        "num_images": len(dataset),
        "num_instances": int(counts.sum()),
        "class_counts": [int(c) for c in counts],
        "rare": rare,
        "non_rare": non_rare,
    }
