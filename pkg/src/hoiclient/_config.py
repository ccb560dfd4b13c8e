# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import json
import logging
import os

from weakhoi.config import BaseConfig
from weakhoi.data import GenSpec
from weakhoi.evaluation import Protocol
from weakhoi.exceptions import InvalidArgument
from weakhoi.learning import ABLATION_PRESETS, TrainConfig, apply_preset
from weakhoi.model import InferenceMode

log = logging.getLogger(__name__)

# Command line spelling of the inference modes.
MODE_ALIASES = {
    "full": InferenceMode.FULL,
    "bank-similarity": InferenceMode.BANK_SIMILARITY_BASELINE,
    "bank-similarity-boost": InferenceMode.BANK_SIMILARITY_BOOST,
}


class RunConfig(BaseConfig):
    """Settings of one batch run, stored as a single JSON file.

    Every command reads the parts it needs, the rest is ignored. Relative paths are used as given, they are not
    resolved against the config file location.

    Attributes:
        vocab (str): The vocabulary JSON file.
        dataset (str): The JSON lines dataset used by train, infer, eval and export-embeddings.
        train_dataset (Optional[str]): Scenes that define the rare/non-rare split for eval, defaults to dataset.
        checkpoint (str): The checkpoint written by train and read by infer and export-embeddings.
        detections (str): The JSON lines detections written by infer and read by eval.
        output_dir (str): Directory for reports, metrics and embedding exports.
        protocol (str): The evaluation Protocol value.
        mode (str): The InferenceMode value used by infer.
        preset (str): Name of an ablation preset applied on top of train when training.
        pr_curves (bool): Whether eval also writes the per class precision-recall CSV.
        gradcheck_sample (Optional[int]): Entries compared per tensor by gradcheck, None sweeps everything.
        gradcheck_tolerance (float): Maximum relative error accepted by gradcheck.
        gradcheck_image_size (Tuple[int, int]): (height, width) of the random gradcheck scene.
        train (TrainConfig): Optimisation settings, including the nested model settings.
        generate (GenSpec): Synthetic dataset settings.
    """

    _defaults = {
        "vocab": "vocab.json",
        "dataset": "dataset.jsonl",
        "train_dataset": None,
        "checkpoint": "model.ckpt",
        "detections": "detections.jsonl",
        "output_dir": ".",
        "protocol": Protocol.CORRECT,
        "mode": InferenceMode.FULL,
        "preset": "full",
        "pr_curves": False,
        "gradcheck_sample": None,
        "gradcheck_tolerance": 1e-4,
        "gradcheck_image_size": (16, 16),
    }
    _nested = {"train": TrainConfig, "generate": GenSpec}

    def set(self, **config):
        # "model" is accepted at the top level as a shortcut for train.model.
        model = config.pop("model", None)
        super(RunConfig, self).set(**config)
        if model is not None:
            if isinstance(model, BaseConfig):
                model = model.to_dict()
            self.train.model.set(**model)
        return self

    def _validate(self):
        self.mode = MODE_ALIASES.get(self.mode, self.mode)
        self.gradcheck_image_size = tuple(int(v) for v in self.gradcheck_image_size)

        if self.protocol not in Protocol.ALL:
            choices = ", ".join(Protocol.ALL)
            raise InvalidArgument("Unknown protocol '%s', expecting one of %s" % (self.protocol, choices))
        if self.mode not in InferenceMode.ALL:
            raise InvalidArgument("Unknown inference mode '%s'" % self.mode)
        if self.preset not in ABLATION_PRESETS:
            raise InvalidArgument("Unknown ablation preset '%s'" % self.preset)
        if self.gradcheck_sample is not None and self.gradcheck_sample < 1:
            raise InvalidArgument("gradcheck_sample must be positive or null")
        if not self.gradcheck_tolerance > 0:
            raise InvalidArgument("gradcheck_tolerance must be positive")

    def training_config(self):
        """The TrainConfig with the preset applied."""
        return apply_preset(self.train, self.preset)

    def output_path(self, name):
        return os.path.join(self.output_dir, name)

    def save(self, path):
        with open(path, mode="w", encoding="utf-8") as fd:
            json.dump(self.to_dict(), fd, indent=2, sort_keys=True)
            fd.write("\n")


def load_run_config(path=None, **overrides):
    """
    Builds a RunConfig from an optional JSON file then applies overrides.

    :param path: The JSON config file, the defaults are used when None.
    :param overrides: RunConfig.set() keyword arguments applied after the file, None values are skipped.
    :return: RunConfig.
    """
    data = {}
    if path is not None:
        log.debug("Loading run config from %s" % path)
        try:
            with open(path, mode="r", encoding="utf-8") as fd:
                data = json.load(fd)
        except ValueError as err:
            raise InvalidArgument("Config file %s is not valid JSON: %s" % (path, err)) from err
        if not isinstance(data, dict):
            raise InvalidArgument("Config file %s must hold a JSON object" % path)

    try:
        config = RunConfig(**data)
        config.set(**{k: v for k, v in overrides.items() if v is not None})
    except InvalidArgument:
        raise
    except (ValueError, TypeError) as err:
        raise InvalidArgument("Invalid run config: %s" % err) from err
    return config
