# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import collections
import functools
import logging
import math
from abc import ABCMeta, abstractmethod

import numpy as np

from weakhoi._text import stable_hash64
from weakhoi.exceptions import InvalidArgument
from weakhoi.nn import accumulate, softmax, softmax_backward

log = logging.getLogger(__name__)

BACKBONE_PARAMETERS = ("patch.weight", "patch.bias", "patch.position")
POOL_PARAMETERS = ("pool.query", "pool.key", "pool.value", "pool.out")


class FeatureMap(collections.namedtuple("FeatureMap", ["data", "image_id"])):
    """The backbone output Γ, data has the shape (D, Gh, Gw)."""

    __slots__ = ()

    @property
    def dim(self):
        return self.data.shape[0]

    @property
    def grid_shape(self):
        return self.data.shape[1], self.data.shape[2]

    def cells(self):
        """The grid cells as a (Gh * Gw, D) matrix in row major order."""
        return self.data.reshape(self.dim, -1).T


def init_visual_params(rng, dim, patch_size, image_size):
    """
    Draws the toy backbone and shared attention pool parameters.

    :param rng: numpy Generator.
    :param dim: The feature dimension D.
    :param patch_size: The patch size P.
    :param image_size: (height, width) of the images, both divisible by P.
    :return: dict of parameter name to array.
    """
    height, width = image_size
    _check_divisible(height, width, patch_size)
    patch_len = 3 * patch_size * patch_size
    scale = 1.0 / math.sqrt(dim)
    return {
        "patch.weight": rng.normal(0.0, 1.0 / math.sqrt(patch_len), size=(dim, patch_len)),
        "patch.bias": np.zeros(dim),
        "patch.position": rng.normal(0.0, 0.1, size=(dim, height // patch_size, width // patch_size)),
        "pool.query": rng.normal(0.0, scale, size=(dim, dim)),
        "pool.key": rng.normal(0.0, scale, size=(dim, dim)),
        "pool.value": rng.normal(0.0, scale, size=(dim, dim)),
        "pool.out": rng.normal(0.0, scale, size=(dim, dim)),
    }


def _check_divisible(height, width, patch_size):
    if patch_size < 1 or height % patch_size or width % patch_size:
        raise InvalidArgument("Image size %dx%d is not divisible by patch size %d" % (height, width, patch_size))


def encode_image_forward(pixels, params, patch_size, image_id=None):
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InvalidArgument("Pixels must have the shape (H, W, 3), got %s" % (pixels.shape,))
    height, width = pixels.shape[:2]
    _check_divisible(height, width, patch_size)

    grid_h, grid_w = height // patch_size, width // patch_size
    patches = (
        pixels.reshape(grid_h, patch_size, grid_w, patch_size, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid_h * grid_w, -1)
    )
    dim = params["patch.weight"].shape[0]
    position = params["patch.position"]
    if position.shape != (dim, grid_h, grid_w):
        raise InvalidArgument("Positional grid %s does not match image grid %dx%d" % (position.shape, grid_h, grid_w))

    cells = np.tanh(patches @ params["patch.weight"].T + params["patch.bias"] + position.reshape(dim, -1).T)
    fmap = FeatureMap(cells.T.reshape(dim, grid_h, grid_w), image_id)
    return fmap, (patches, cells)


def encode_image_backward(cache, dcells, grads):
    """
    :param cache: The cache from encode_image_forward.
    :param dcells: Gradient w.r.t. the (G, D) cell matrix.
    :param grads: Parameter gradient dict to accumulate into.
    """
    patches, cells = cache
    dpre = dcells * (1.0 - cells**2)
    accumulate(grads, "patch.weight", dpre.T @ patches)
    accumulate(grads, "patch.bias", dpre.sum(axis=0))
    if grads is not None and "patch.position" in grads:
        grads["patch.position"] += dpre.T.reshape(grads["patch.position"].shape)


def encode_image(pixels, params, patch_size, image_id=None):
    """
    Toy backbone: every P x P patch is projected, offset by a learnt positional vector and squashed with tanh.

    :return: FeatureMap of shape (D, H / P, W / P).
    """
    return encode_image_forward(pixels, params, patch_size, image_id=image_id)[0]


def attention_pool_forward(cells, params):
    cells = np.asarray(cells, dtype=np.float64)
    if cells.ndim != 2 or cells.shape[0] == 0:
        raise InvalidArgument("Attention pooling needs at least one cell")

    dim = cells.shape[1]
    mean = cells.mean(axis=0)
    query = params["pool.query"] @ mean
    keys = cells @ params["pool.key"].T
    values = cells @ params["pool.value"].T
    alpha = softmax(keys @ query / math.sqrt(dim))
    context = alpha @ values
    out = params["pool.out"] @ context
    return out, (cells, mean, query, keys, values, alpha, context)


def attention_pool_backward(cache, dout, params, grads):
    cells, mean, query, keys, values, alpha, context = cache
    n, dim = cells.shape
    scale = math.sqrt(dim)

    accumulate(grads, "pool.out", np.outer(dout, context))
    dcontext = params["pool.out"].T @ dout

    dalpha = values @ dcontext
    dvalues = np.outer(alpha, dcontext)
    accumulate(grads, "pool.value", dvalues.T @ cells)
    dcells = dvalues @ params["pool.value"]

    dlogits = softmax_backward(alpha, dalpha)
    dkeys = np.outer(dlogits, query) / scale
    dquery = keys.T @ dlogits / scale
    accumulate(grads, "pool.key", dkeys.T @ cells)
    dcells += dkeys @ params["pool.key"]

    accumulate(grads, "pool.query", np.outer(dquery, mean))
    dcells += (params["pool.query"].T @ dquery) / n
    return dcells


def attention_pool(cells, params):
    """
    Single head attention pooling queried by the cell mean:
    q = W_q mean(cells), alpha = softmax(q . W_k c_i / sqrt(D)), out = W_o sum_i alpha_i W_v c_i.

    :param cells: (n, D) matrix, n >= 1.
    :return: The pooled D vector.
    """
    return attention_pool_forward(cells, params)[0]


def pool_weights(cells, params):
    """The attention distribution alpha over the cells."""
    return attention_pool_forward(cells, params)[1][5]


def roi_sampling_matrix(box, grid_shape, patch_size, resolution):
    """
    Builds the (R * R, Gh * Gw) bilinear interpolation matrix of RoI-align. One sample is taken at the center of each
    of the R x R bins, pixel x maps to grid coordinate x / P - 0.5 so cell centers land on integers, coordinates are
    clamped into the grid.
    """
    grid_h, grid_w = grid_shape
    if resolution < 1:
        raise InvalidArgument("RoI grid resolution must be at least 1, got %s" % resolution)
    if not box.inside(grid_w * patch_size, grid_h * patch_size):
        raise InvalidArgument("Box %s lies outside the %dx%d image" % (box, grid_w * patch_size, grid_h * patch_size))

    matrix = np.zeros((resolution * resolution, grid_h * grid_w))
    for i in range(resolution):
        gy = (box.y1 + (i + 0.5) * box.height / resolution) / patch_size - 0.5
        gy = min(max(gy, 0.0), grid_h - 1.0)
        y0 = int(math.floor(gy))
        y1 = min(y0 + 1, grid_h - 1)
        ly = gy - y0
        for j in range(resolution):
            gx = (box.x1 + (j + 0.5) * box.width / resolution) / patch_size - 0.5
            gx = min(max(gx, 0.0), grid_w - 1.0)
            x0 = int(math.floor(gx))
            x1 = min(x0 + 1, grid_w - 1)
            lx = gx - x0

            row = i * resolution + j
            matrix[row, y0 * grid_w + x0] += (1.0 - ly) * (1.0 - lx)
            matrix[row, y0 * grid_w + x1] += (1.0 - ly) * lx
            matrix[row, y1 * grid_w + x0] += ly * (1.0 - lx)
            matrix[row, y1 * grid_w + x1] += ly * lx
    return matrix


def roi_align(fmap, box, resolution, patch_size):
    """
    Crops an R x R grid of D vectors out of the feature map by bilinear sampling.

    :return: numpy array of shape (R, R, D).
    """
    matrix = roi_sampling_matrix(box, fmap.grid_shape, patch_size, resolution)
    return (matrix @ fmap.cells()).reshape(resolution, resolution, fmap.dim)


def region_feature_forward(cells, grid_shape, box, params, patch_size, resolution):
    matrix = roi_sampling_matrix(box, grid_shape, patch_size, resolution)
    out, pool_cache = attention_pool_forward(matrix @ cells, params)
    return out, (matrix, pool_cache)


def region_feature_backward(cache, dout, params, grads):
    """Returns the gradient w.r.t. the (G, D) feature cells."""
    matrix, pool_cache = cache
    return matrix.T @ attention_pool_backward(pool_cache, dout, params, grads)


def region_feature(fmap, box, params, patch_size, resolution):
    """
    Appearance feature of a box: RoI-align followed by the shared attention pool. Gives v_h, v_o or v_u depending
    on the box passed in.
    """
    return region_feature_forward(fmap.cells(), fmap.grid_shape, box, params, patch_size, resolution)[0]


class VisualEncoder(metaclass=ABCMeta):
    """
    The backbone interface the model trains through. Implementations must be deterministic for a given parameter
    set and provide an exact backward pass.
    """

    @abstractmethod
    def init_params(self, rng):
        pass  # pragma: no cover

    @abstractmethod
    def forward(self, pixels, params, image_id=None):
        """Returns (FeatureMap, cache)."""
        pass  # pragma: no cover

    @abstractmethod
    def backward(self, cache, dcells, grads):
        pass  # pragma: no cover


class PatchEncoder(VisualEncoder):
    def __init__(self, dim, patch_size, image_size):
        self.dim = dim
        self.patch_size = patch_size
        self.image_size = tuple(image_size)

    def init_params(self, rng):
        return init_visual_params(rng, self.dim, self.patch_size, self.image_size)

    def forward(self, pixels, params, image_id=None):
        return encode_image_forward(pixels, params, self.patch_size, image_id=image_id)

    def backward(self, cache, dcells, grads):
        encode_image_backward(cache, dcells, grads)


class TextEncoder(metaclass=ABCMeta):
    """Maps a text prompt to a unit norm D vector, the same text must always give the same vector."""

    def __init__(self, dim):
        self.dim = dim

    @abstractmethod
    def encode(self, text):
        pass  # pragma: no cover


@functools.lru_cache(maxsize=4096)
def _token_vector(token, dim):
    vector = np.random.default_rng(stable_hash64(token)).standard_normal(dim)
    vector.setflags(write=False)
    return vector


def toy_text_encode(text, dim):
    """
    Deterministic stand-in for a language model text encoder. Each whitespace token seeds a normal random vector
    from a stable 64-bit hash, the token vectors are averaged and L2 normalised.

    :param text: The prompt.
    :param dim: The output dimension D.
    :return: Unit norm numpy vector of length D.
    """
    if not isinstance(text, str) or not text.strip():
        raise InvalidArgument("Cannot encode an empty text")

    vector = np.mean([_token_vector(token, dim) for token in text.split()], axis=0)
    norm = np.linalg.norm(vector)
    if norm == 0.0:  # pragma: no cover
        raise InvalidArgument("Text '%s' encodes to a zero vector" % text)
    return vector / norm


class ToyTextEncoder(TextEncoder):
    def encode(self, text):
        return toy_text_encode(text, self.dim)
