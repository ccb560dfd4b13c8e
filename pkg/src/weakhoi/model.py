# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import collections
import logging

import numpy as np

from weakhoi.config import BaseConfig
from weakhoi.data import ProposalKind, scene_pixels
from weakhoi.encoder import (
    PatchEncoder,
    ToyTextEncoder,
    attention_pool_backward,
    attention_pool_forward,
    region_feature_backward,
    region_feature_forward,
)
from weakhoi.exceptions import EmptyBag, InvalidArgument
from weakhoi.geometry import (
    SPATIAL_FEATURE_SIZE,
    Box,
    embed_spatial_backward,
    embed_spatial_forward,
    spatial_features,
    union_box,
)
from weakhoi.nn import (
    accumulate,
    init_linear,
    init_mlp,
    linear_backward,
    linear_forward,
    mlp_backward,
    mlp_forward,
    sigmoid,
    softmax,
    softmax_backward,
)

log = logging.getLogger(__name__)

BANK = "bank"
DEFAULT_GAMMA = 2.8


class KTNMode(object):
    """How the knowledge transfer network mixes the bank into the pair feature."""

    SOFTMAX = "softmax"
    UNIFORM = "uniform"
    SIGMOID = "sigmoid"
    UNION_ONLY = "union_only"
    NONE = "none"

    ALL = (SOFTMAX, UNIFORM, SIGMOID, UNION_ONLY, NONE)


class InferenceMode(object):
    FULL = "full"
    BANK_SIMILARITY_BASELINE = "bank_similarity_baseline"
    BANK_SIMILARITY_BOOST = "bank_similarity_boost"

    ALL = (FULL, BANK_SIMILARITY_BASELINE, BANK_SIMILARITY_BOOST)


class BankInit(object):
    TEXT = "text"
    RANDOM = "random"


class ModelConfig(BaseConfig):
    """Architecture and inference settings of the two level model.

    Attributes:
        embed_dim (int): The feature dimension D shared by every branch.
        patch_size (int): Encoder patch size P.
        image_size (Tuple[int, int]): (height, width) of the input images.
        roi_grid (int): RoI-align output resolution.
        ktn_mode (str): A KTNMode value.
        local_detached (bool): Stop gradients of the pair branch from reaching the knowledge bank.
        bank_trainable (bool): Whether the knowledge bank is updated at all.
        bank_init (str): A BankInit value, prompt embeddings or random unit rows.
        gamma (float): Exponent of the detection score term in the final score.
        use_global_scores (bool): Multiply the global HOI probability into the pair score.
        use_relatedness (bool): Multiply the relatedness probability into the pair score.
    """

    _defaults = {
        "embed_dim": 16,
        "patch_size": 8,
        "image_size": (64, 64),
        "roi_grid": 2,
        "ktn_mode": KTNMode.SOFTMAX,
        "local_detached": True,
        "bank_trainable": True,
        "bank_init": BankInit.TEXT,
        "gamma": DEFAULT_GAMMA,
        "use_global_scores": True,
        "use_relatedness": True,
    }

    def _validate(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        if self.embed_dim < 1 or self.roi_grid < 1:
            raise InvalidArgument("embed_dim and roi_grid must be positive")
        height, width = self.image_size
        if self.patch_size < 1 or height % self.patch_size or width % self.patch_size:
            raise InvalidArgument("Image size %dx%d is not divisible by patch %d" % (height, width, self.patch_size))
        if self.ktn_mode not in KTNMode.ALL:
            choices = ", ".join(KTNMode.ALL)
            raise InvalidArgument("Unknown KTN mode '%s', expecting one of %s" % (self.ktn_mode, choices))
        if self.bank_init not in (BankInit.TEXT, BankInit.RANDOM):
            raise InvalidArgument("Unknown bank init '%s'" % self.bank_init)
        if not self.gamma > 0:
            raise InvalidArgument("gamma must be positive, got %s" % self.gamma)


class Detection(
    collections.namedtuple(
        "Detection",
        [
            "image_id",
            "pair_index",
            "human_box",
            "object_box",
            "object_class",
            "verb",
            "hoi_id",
            "score",
            "score_R",
            "components",
        ],
    )
):
    """One scored (human, verb, object) triplet, score is the fused interaction score and score_R the final rank."""

    __slots__ = ()

    def to_dict(self):
        return {
            "image_id": self.image_id,
            "pair_index": self.pair_index,
            "human_box": self.human_box.to_list(),
            "object_box": self.object_box.to_list(),
            "object_class": self.object_class,
            "verb": self.verb,
            "hoi_id": self.hoi_id,
            "score": self.score,
            "score_R": self.score_R,
            "score_components": dict(self.components),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            image_id=str(data["image_id"]),
            pair_index=int(data.get("pair_index", 0)),
            human_box=Box.from_list(data["human_box"]),
            object_box=Box.from_list(data["object_box"]),
            object_class=int(data["object_class"]),
            verb=int(data["verb"]),
            hoi_id=None if data.get("hoi_id") is None else int(data["hoi_id"]),
            score=float(data.get("score", data["score_R"])),
            score_R=float(data["score_R"]),
            components=dict(data.get("score_components", {})),
        )


def global_hoi_scores(v_g, bank):
    """s_g = W_T v_g, one logit per HOI class."""
    v_g = np.asarray(v_g, dtype=np.float64)
    if bank.ndim != 2 or v_g.shape != (bank.shape[1],):
        raise InvalidArgument("Global feature of shape %s does not match bank %s" % (v_g.shape, bank.shape))
    return bank @ v_g


def holistic_pair_forward(v_h, v_o, v_sp, params):
    dim = params["embed.out.weight"].shape[0]
    for v in (v_h, v_o, v_sp):
        if np.shape(v) != (dim,):
            raise InvalidArgument("Pair branch features must have length %d, got %s" % (dim, np.shape(v)))
    return mlp_forward(params, "embed", np.concatenate([v_h, v_o, v_sp]))


def holistic_pair_backward(cache, dv_p, params, grads):
    """Returns (dv_h, dv_o, dv_sp)."""
    dx = mlp_backward(params, "embed", cache, dv_p, grads)
    return np.split(dx, 3)


def holistic_pair_feature(v_h, v_o, v_sp, params):
    """v_p = F_E([v_h; v_o; v_sp])"""
    return holistic_pair_forward(v_h, v_o, v_sp, params)[0]


def ktn_forward(v_p, v_u, params, mode):
    if mode not in KTNMode.ALL:
        raise InvalidArgument("Unknown KTN mode '%s'" % mode)

    bank = params[BANK]
    alpha = None
    union_cache = None
    if mode == KTNMode.SOFTMAX:
        alpha = softmax(bank @ v_u)
        v_meta = alpha @ bank
    elif mode == KTNMode.SIGMOID:
        alpha = sigmoid(bank @ v_u)
        v_meta = alpha @ bank
    elif mode == KTNMode.UNIFORM:
        alpha = np.full(bank.shape[0], 1.0 / bank.shape[0])
        v_meta = alpha @ bank
    elif mode == KTNMode.UNION_ONLY:
        v_meta, union_cache = linear_forward(params, "union", v_u)
    else:
        v_meta = np.zeros_like(v_p)

    v_hat, transfer_cache = mlp_forward(params, "transfer", v_p + v_meta)
    return (v_hat, alpha, v_meta), (mode, v_u, alpha, union_cache, transfer_cache)


def ktn_backward(cache, dv_hat, params, grads, bank_grads=True):
    """
    Backward pass of the knowledge transfer network.

    :param bank_grads: Accumulate gradients into the knowledge bank, False detaches it for this branch.
    :return: (dv_p, dv_u).
    """
    mode, v_u, alpha, union_cache, transfer_cache = cache
    bank = params[BANK]
    dz = mlp_backward(params, "transfer", transfer_cache, dv_hat, grads)
    bank_sink = grads if bank_grads else None

    dv_u = np.zeros_like(v_u)
    if mode in (KTNMode.SOFTMAX, KTNMode.SIGMOID, KTNMode.UNIFORM):
        accumulate(bank_sink, BANK, np.outer(alpha, dz))
        if mode != KTNMode.UNIFORM:
            dalpha = bank @ dz
            if mode == KTNMode.SOFTMAX:
                dlogits = softmax_backward(alpha, dalpha)
            else:
                dlogits = dalpha * alpha * (1.0 - alpha)
            accumulate(bank_sink, BANK, np.outer(dlogits, v_u))
            dv_u = bank.T @ dlogits
    elif mode == KTNMode.UNION_ONLY:
        dv_u = linear_backward(params, "union", union_cache, dz, grads)

    return dz, dv_u


def ktn(v_p, v_u, params, mode=KTNMode.SOFTMAX):
    """
    Enriches the pair feature with knowledge bank prototypes queried by the union feature.

    :return: (v_hat, alpha), alpha is None for the union_only and none modes.
    """
    (v_hat, alpha, _), _ = ktn_forward(v_p, v_u, params, mode)
    return v_hat, alpha


def pair_heads_forward(v_hat, params):
    if np.shape(v_hat) != (params["interaction.weight"].shape[1],):
        raise InvalidArgument("Pair feature of shape %s does not match the heads" % (np.shape(v_hat),))
    s_p, p_cache = linear_forward(params, "interaction", v_hat)
    s_b, b_cache = linear_forward(params, "relatedness", v_hat)
    return (s_p, float(s_b[0])), (p_cache, b_cache)


def pair_heads_backward(cache, ds_p, ds_b, params, grads):
    p_cache, b_cache = cache
    dv_hat = linear_backward(params, "interaction", p_cache, ds_p, grads)
    dv_hat += linear_backward(params, "relatedness", b_cache, np.array([ds_b]), grads)
    return dv_hat


def pair_heads(v_hat, params):
    """s_p = F_P(v_hat) over the A verbs and the relatedness logit s_b = F_B(v_hat)."""
    return pair_heads_forward(v_hat, params)[0]


def aggregate_scores(S):
    """Per verb maximum over the pairs of an image."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0:
        raise EmptyBag("Cannot aggregate interaction scores of an image without pairs")
    return S.max(axis=0)


def normalize_pairs(S):
    """
    Softmax of every verb column over the pairs, then scaled by the sigmoid of the image level maximum.

    :param S: (M, A) interaction logits, M >= 1.
    :return: (S_bar, E) where E[m] is e_p of pair m.
    """
    S = np.asarray(S, dtype=np.float64)
    s_max = aggregate_scores(S)
    S_bar = softmax(S, axis=0)
    return S_bar, sigmoid(s_max)[None, :] * S_bar


def bank_similarity(v_u, bank_row):
    """(1 + cos(v_u, W_T row)) / 2, in [0, 1]."""
    norm = np.linalg.norm(v_u) * np.linalg.norm(bank_row)
    if norm == 0.0:
        return 0.5
    return float((1.0 + np.dot(v_u, bank_row) / norm) / 2.0)


def fuse_scores(
    s_g,
    e_p,
    s_b,
    verb,
    object_class,
    s_h,
    s_o,
    vocabulary,
    gamma=DEFAULT_GAMMA,
    use_global_scores=True,
    use_relatedness=True,
):
    """
    Fuses the global, pair and relatedness scores of one verb of a pair.

    :param s_g: The N global logits.
    :param e_p: The A normalised pair scores.
    :param s_b: The relatedness logit.
    :param verb: Verb id a.
    :param object_class: The object class of the pair.
    :param s_h: Human detection score in [0, 1].
    :param s_o: Object detection score in [0, 1].
    :param vocabulary: HOIVocabulary used to index s_g by (a, c_o).
    :param gamma: Weight of the detection scores.
    :return: (s, R, components) or None when (verb, object_class) is not a valid combination.
    """
    if not (0.0 <= s_h <= 1.0 and 0.0 <= s_o <= 1.0):
        raise InvalidArgument("Detection scores must lie in [0, 1], got %s and %s" % (s_h, s_o))
    if not gamma > 0:
        raise InvalidArgument("gamma must be positive, got %s" % gamma)

    hoi_id = vocabulary.hoi_index(verb, object_class)
    if hoi_id is None:
        return None

    global_term = float(sigmoid(s_g[hoi_id])) if use_global_scores else 1.0
    relatedness_term = float(sigmoid(s_b)) if use_relatedness else 1.0
    pair_term = float(e_p[verb])
    det_term = (s_h * s_o) ** gamma

    score = global_term * pair_term * relatedness_term
    components = {"global": global_term, "pair": pair_term, "relatedness": relatedness_term, "det": det_term}
    return score, det_term * score, components


ProposalPair = collections.namedtuple("ProposalPair", ["human_index", "object_index"])


def enumerate_pairs(proposals):
    """Every human proposal with every object proposal, human major, except pairs sharing an identical box."""
    humans = [i for i, p in enumerate(proposals) if p.kind == ProposalKind.HUMAN]
    objects = [i for i, p in enumerate(proposals) if p.kind == ProposalKind.OBJECT]
    return [ProposalPair(h, o) for h in humans for o in objects if proposals[h].box != proposals[o].box]


class SceneForward(object):
    """Outputs and caches of one forward pass over a scene, consumed by the losses and the backward pass."""

    def __init__(self, image_id, pairs, proposals, image_size):
        self.image_id = image_id
        self.pairs = pairs
        self.proposals = proposals
        self.image_size = image_size

        self.v_g = None
        self.s_g = None
        self.S = None
        self.s_b = None
        self.v_p = None
        self.v_u = None
        self.v_hat = None
        self.alpha = None

        self.encoder_cache = None
        self.cells = None
        self.global_cache = None
        self.region_caches = {}
        self.pair_caches = []

    @property
    def num_pairs(self):
        return len(self.pairs)


class HOIModel(object):
    def __init__(self, config, vocabulary, visual_encoder=None, text_encoder=None):
        """
        The two level weakly supervised HOI network: a global branch recognising the image level HOI classes through
        the knowledge bank and a pair branch scoring every human-object pair.

        :param config: ModelConfig.
        :param vocabulary: HOIVocabulary, fixes N, A and C.
        :param visual_encoder: Optional VisualEncoder, defaults to the toy PatchEncoder.
        :param text_encoder: Optional TextEncoder used to initialise the bank, defaults to ToyTextEncoder.
        """
        self.config = config
        self.vocabulary = vocabulary
        self.visual_encoder = visual_encoder or PatchEncoder(config.embed_dim, config.patch_size, config.image_size)
        self.text_encoder = text_encoder or ToyTextEncoder(config.embed_dim)

    def init_bank(self, rng):
        dim = self.config.embed_dim
        if self.config.bank_init == BankInit.TEXT:
            if self.text_encoder.dim != dim:
                raise InvalidArgument("Text encoder dim %d does not match embed_dim %d" % (self.text_encoder.dim, dim))
            return np.stack([self.text_encoder.encode(p) for p in self.vocabulary.prompts()])

        rows = rng.standard_normal((self.vocabulary.num_combos, dim))
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)

    def init_params(self, rng):
        """Draws a fresh parameter set, deterministic for a given generator state."""
        dim = self.config.embed_dim
        params = self.visual_encoder.init_params(rng)
        params.update(init_mlp(rng, "spatial", 2 * SPATIAL_FEATURE_SIZE, dim, dim))
        params.update(init_mlp(rng, "embed", 3 * dim, dim, dim))
        params.update(init_mlp(rng, "transfer", dim, dim, dim))
        if self.config.ktn_mode == KTNMode.UNION_ONLY:
            params.update(init_linear(rng, "union", dim, dim))
        params.update(init_linear(rng, "interaction", dim, self.vocabulary.num_verbs))
        params.update(init_linear(rng, "relatedness", dim, 1))
        params[BANK] = self.init_bank(rng)
        return params

    def trainable_names(self, params):
        return sorted(n for n in params if n != BANK or self.config.bank_trainable)

    def check_params(self, params):
        bank = params.get(BANK)
        if bank is None or bank.shape != (self.vocabulary.num_combos, self.config.embed_dim):
            raise InvalidArgument(
                "Knowledge bank must have shape (%d, %d)" % (self.vocabulary.num_combos, self.config.embed_dim)
            )
        if not np.all(np.isfinite(bank)):
            raise InvalidArgument("Knowledge bank has non-finite entries")

    def forward(self, pixels, proposals, params, image_id=None):
        """
        Runs both branches over one image. Proposal boxes that reach past the border are clamped into the image
        before RoI-align and the union box, detections still report the boxes as given.

        :param pixels: (H, W, 3) array.
        :param proposals: Sequence of Proposal.
        :param params: The parameter dict.
        :param image_id: Carried into the result for logging.
        :return: SceneForward.
        """
        cfg = self.config
        height, width = np.shape(pixels)[:2]
        pairs = enumerate_pairs(proposals)
        fwd = SceneForward(image_id, pairs, proposals, (height, width))

        fmap, fwd.encoder_cache = self.visual_encoder.forward(pixels, params, image_id=image_id)
        cells = fwd.cells = fmap.cells()
        grid = fmap.grid_shape

        fwd.v_g, fwd.global_cache = attention_pool_forward(cells, params)
        fwd.s_g = global_hoi_scores(fwd.v_g, params[BANK])

        boxes = {}
        region = {}
        for index in sorted({i for pair in pairs for i in pair}):
            boxes[index] = proposals[index].box.clamp(width, height)
            if boxes[index] is None:
                raise InvalidArgument(
                    "Proposal %d of %s lies entirely outside the %dx%d image" % (index, image_id, width, height)
                )
            region[index], fwd.region_caches[index] = region_feature_forward(
                cells, grid, boxes[index], params, cfg.patch_size, cfg.roi_grid
            )

        num_verbs = self.vocabulary.num_verbs
        S = np.zeros((len(pairs), num_verbs))
        s_b = np.zeros(len(pairs))
        v_p_rows, v_u_rows, v_hat_rows, alphas = [], [], [], []
        for m, (h, o) in enumerate(pairs):
            human_box, object_box = boxes[h], boxes[o]
            p = spatial_features(human_box, object_box, width, height)
            v_sp, sp_cache = embed_spatial_forward(p, params)
            v_p, e_cache = holistic_pair_forward(region[h], region[o], v_sp, params)
            v_u, u_cache = region_feature_forward(
                cells, grid, union_box(human_box, object_box), params, cfg.patch_size, cfg.roi_grid
            )
            (v_hat, alpha, _), k_cache = ktn_forward(v_p, v_u, params, cfg.ktn_mode)
            (S[m], s_b[m]), head_cache = pair_heads_forward(v_hat, params)

            v_p_rows.append(v_p)
            v_u_rows.append(v_u)
            v_hat_rows.append(v_hat)
            alphas.append(alpha)
            fwd.pair_caches.append((sp_cache, e_cache, u_cache, k_cache, head_cache))

        dim = cfg.embed_dim
        fwd.S = S
        fwd.s_b = s_b
        fwd.v_p = np.array(v_p_rows).reshape(len(pairs), dim)
        fwd.v_u = np.array(v_u_rows).reshape(len(pairs), dim)
        fwd.v_hat = np.array(v_hat_rows).reshape(len(pairs), dim)
        fwd.alpha = alphas
        return fwd

    def backward(self, fwd, params, grads, ds_g=None, dS=None, ds_b=None, dv_p=None, dv_g=None):
        """
        Accumulates the parameter gradients of a scalar loss given its gradients w.r.t. the scene outputs. Any of
        the output gradients may be None. The pair branch never writes to the knowledge bank gradient while
        local_detached is set.
        """
        dim = self.config.embed_dim
        bank = params[BANK]
        cells = fwd.cells
        dcells = np.zeros_like(cells)

        dv_g_total = np.zeros(dim) if dv_g is None else np.array(dv_g, dtype=np.float64)
        if ds_g is not None:
            accumulate(grads, BANK, np.outer(ds_g, fwd.v_g))
            dv_g_total = dv_g_total + bank.T @ ds_g

        dregion = collections.defaultdict(lambda: np.zeros(dim))
        bank_grads = not self.config.local_detached
        for m, (h, o) in enumerate(fwd.pairs):
            sp_cache, e_cache, u_cache, k_cache, head_cache = fwd.pair_caches[m]
            ds_p_m = np.zeros(self.vocabulary.num_verbs) if dS is None else dS[m]
            ds_b_m = 0.0 if ds_b is None else float(ds_b[m])
            dv_hat = pair_heads_backward(head_cache, ds_p_m, ds_b_m, params, grads)

            dv_p_m, dv_u = ktn_backward(k_cache, dv_hat, params, grads, bank_grads=bank_grads)
            if dv_p is not None:
                dv_p_m = dv_p_m + dv_p[m]

            dv_h, dv_o, dv_sp = holistic_pair_backward(e_cache, dv_p_m, params, grads)
            embed_spatial_backward(sp_cache, dv_sp, params, grads)
            dregion[h] += dv_h
            dregion[o] += dv_o
            dcells += region_feature_backward(u_cache, dv_u, params, grads)

        for index, dv in dregion.items():
            dcells += region_feature_backward(fwd.region_caches[index], dv, params, grads)

        dcells += attention_pool_backward(fwd.global_cache, dv_g_total, params, grads)
        self.visual_encoder.backward(fwd.encoder_cache, dcells, grads)

    def forward_scene(self, scene, params, pixels=None):
        if pixels is None:
            pixels = scene_pixels(scene, self.vocabulary.num_verbs)
        return self.forward(pixels, scene.proposals, params, image_id=scene.image_id)

    def detect(self, scene, params, mode=InferenceMode.FULL, pixels=None):
        """
        Scores every human-object pair of a scene and emits one detection per pair and valid verb.

        :param scene: SceneRecord.
        :param params: The parameter dict.
        :param mode: An InferenceMode value.
        :param pixels: Optional pre rendered pixels of the scene.
        :return: List of Detection sorted by score_R descending, ties by pair then verb.
        """
        if mode not in InferenceMode.ALL:
            raise InvalidArgument("Unknown inference mode '%s'" % mode)

        fwd = self.forward_scene(scene, params, pixels=pixels)
        if fwd.num_pairs == 0:
            log.debug("Scene %s has no human-object pairs" % scene.image_id)
            return []

        cfg = self.config
        _, E = normalize_pairs(fwd.S)
        bank = params[BANK]
        detections = []
        for m, (h, o) in enumerate(fwd.pairs):
            human, obj = scene.proposals[h], scene.proposals[o]
            for verb, hoi_id in self.vocabulary.verbs_for_object(obj.object_class):
                fused = fuse_scores(
                    fwd.s_g,
                    E[m],
                    fwd.s_b[m],
                    verb,
                    obj.object_class,
                    human.score,
                    obj.score,
                    self.vocabulary,
                    gamma=cfg.gamma,
                    use_global_scores=cfg.use_global_scores,
                    use_relatedness=cfg.use_relatedness,
                )
                score, final, components = fused
                if mode != InferenceMode.FULL:
                    similarity = bank_similarity(fwd.v_u[m], bank[hoi_id])
                    components["similarity"] = similarity
                    score = similarity if mode == InferenceMode.BANK_SIMILARITY_BASELINE else score * similarity
                    final = components["det"] * score

                detections.append(
                    Detection(
                        scene.image_id, m, human.box, obj.box, obj.object_class, verb, hoi_id, score, final, components
                    )
                )

        detections.sort(key=lambda d: (-d.score_R, d.pair_index, d.verb))
        return detections


def detect(scene, params, model, mode=InferenceMode.FULL):
    """Module level shortcut for HOIModel.detect()."""
    return model.detect(scene, params, mode=mode)

