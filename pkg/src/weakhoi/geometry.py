# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import collections
import math

import numpy as np

from weakhoi.exceptions import InvalidArgument
from weakhoi.nn import mlp_backward, mlp_forward

SPATIAL_EPSILON = 1e-6
SPATIAL_FEATURE_SIZE = 18

# The layout of spatial_features(), frozen so stored checkpoints stay meaningful.
SPATIAL_FEATURE_NAMES = (
    "human_cx",
    "human_cy",
    "human_w",
    "human_h",
    "human_aspect",
    "human_area",
    "object_cx",
    "object_cy",
    "object_w",
    "object_h",
    "object_aspect",
    "object_area",
    "iou",
    "area_ratio",
    "abs_dx",
    "abs_dy",
    "object_right_of_human",
    "center_distance",
)


class Box(collections.namedtuple("Box", ["x1", "y1", "x2", "y2"])):
    """An axis aligned box in pixel coordinates, x1 < x2 and y1 < y2."""

    __slots__ = ()

    def __new__(cls, x1, y1, x2, y2):
        coords = [float(c) for c in (x1, y1, x2, y2)]
        if not all(math.isfinite(c) for c in coords):
            raise InvalidArgument("Box coordinates must be finite, got %s" % (coords,))
        if not (coords[0] < coords[2] and coords[1] < coords[3]):
            raise InvalidArgument("Degenerate box %s, requires x1 < x2 and y1 < y2" % (coords,))
        return super(Box, cls).__new__(cls, *coords)

    @classmethod
    def from_list(cls, values):
        if len(values) != 4:
            raise InvalidArgument("A box needs 4 coordinates, got %d" % len(values))
        return cls(*values)

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def to_list(self):
        return [self.x1, self.y1, self.x2, self.y2]

    def translate(self, dx, dy):
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def clamp(self, width, height):
        """Clips the box into [0, width] x [0, height], returns None if nothing is left."""
        x1, y1 = min(max(self.x1, 0.0), width), min(max(self.y1, 0.0), height)
        x2, y2 = min(max(self.x2, 0.0), width), min(max(self.y2, 0.0), height)
        if x2 <= x1 or y2 <= y1:
            return None
        return Box(x1, y1, x2, y2)

    def inside(self, width, height):
        return self.x1 >= 0 and self.y1 >= 0 and self.x2 <= width and self.y2 <= height


def _intersection(a, b):
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a, b):
    """Intersection over union of two boxes, 0 when they are disjoint."""
    inter = _intersection(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def union_box(a, b):
    return Box(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def spatial_features(human, obj, image_width, image_height):
    """
    Encodes the layout of a human-object pair as 18 non-negative values, see SPATIAL_FEATURE_NAMES for the order.
    Boxes that were jittered outside the image are clamped first.

    :param human: The human Box.
    :param obj: The object Box.
    :param image_width: The image width in pixels.
    :param image_height: The image height in pixels.
    :return: A numpy float64 vector of length 18.
    """
    if not image_width or not image_height or image_width <= 0 or image_height <= 0:
        raise InvalidArgument("Image dimensions must be positive, got %sx%s" % (image_width, image_height))

    clamped_h = human.clamp(image_width, image_height)
    clamped_o = obj.clamp(image_width, image_height)
    if clamped_h is None or clamped_o is None:
        raise InvalidArgument("Pair boxes %s, %s lie outside the image" % (human, obj))
    human, obj = clamped_h, clamped_o

    def per_box(box):
        cx, cy = box.center
        return [
            cx / image_width,
            cy / image_height,
            box.width / image_width,
            box.height / image_height,
            box.width / box.height,
            box.area / (image_width * image_height),
        ]

    (hcx, hcy), (ocx, ocy) = human.center, obj.center
    dx, dy = ocx - hcx, ocy - hcy
    features = per_box(human) + per_box(obj)
    features += [
        iou(human, obj),
        human.area / obj.area,
        abs(dx) / image_width,
        abs(dy) / image_height,
        1.0 if dx >= 0 else 0.0,
        math.hypot(dx, dy) / math.hypot(image_width, image_height),
    ]
    return np.array(features, dtype=np.float64)


def spatial_input(p):
    """[p; log(p + eps)], the 36 value input of the spatial embedding."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (SPATIAL_FEATURE_SIZE,):
        raise InvalidArgument("Spatial encoding must have %d entries, got %s" % (SPATIAL_FEATURE_SIZE, p.shape))
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidArgument("Spatial encoding entries must be finite and non-negative")
    return np.concatenate([p, np.log(p + SPATIAL_EPSILON)])


def embed_spatial_forward(p, params):
    return mlp_forward(params, "spatial", spatial_input(p))


def embed_spatial_backward(cache, dv_sp, params, grads):
    # p is data, only the parameters receive gradients
    mlp_backward(params, "spatial", cache, dv_sp, grads)


def embed_spatial(p, params):
    """
    Embeds the spatial encoding into a D dimensional vector v_sp = F_sp([p; log(p + eps)]).

    :param p: The length 18 output of spatial_features().
    :param params: The parameter dict holding the spatial.* MLP weights.
    :return: The length D vector.
    """
    return embed_spatial_forward(p, params)[0]
