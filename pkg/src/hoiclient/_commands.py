# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import logging
import os
import sys

import numpy as np

from hoiclient._report import (
    format_table,
    load_detections,
    save_detections,
    write_embeddings_csv,
    write_json,
    write_metrics_csv,
    write_pr_csv,
)
from weakhoi.checkpoint import load_checkpoint, save_checkpoint
from weakhoi.data import build_vocabulary, generate, generation_manifest, load_dataset, save_dataset
from weakhoi.evaluation import evaluate
from weakhoi.exceptions import GradientCheckFailed, InvalidArgument, TrainingDiverged
from weakhoi.gradcheck import check_gradients, random_scene
from weakhoi.learning import TrainConfig, train
from weakhoi.model import BANK, HOIModel
from weakhoi.vocab import load_vocabulary, save_vocabulary

log = logging.getLogger(__name__)


def _check_output(path):
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise InvalidArgument("Output directory %s does not exist" % directory)
    return path


def _check_image_size(dataset, model_config):
    for scene in dataset:
        if (scene.height, scene.width) != model_config.image_size:
            raise InvalidArgument(
                "Scene %s is %dx%d but the model expects %dx%d"
                % ((scene.image_id, scene.height, scene.width) + model_config.image_size)
            )


def load_model(checkpoint_path, vocabulary):
    """
    Rebuilds the model stored in a checkpoint.

    :return: (HOIModel, params, TrainConfig).
    """
    checkpoint = load_checkpoint(checkpoint_path, vocabulary=vocabulary)
    train_config = TrainConfig.from_dict(checkpoint.config)
    model = HOIModel(train_config.model, vocabulary)
    model.check_params(checkpoint.params)
    return model, checkpoint.params, train_config


def cmd_gen_data(config, out=None):
    """
    Generates the synthetic vocabulary and dataset, the manifest is written next to the dataset.

    :param config: RunConfig, the generate section drives the generator.
    :param out: Overrides the dataset path.
    :return: The dataset path.
    """
    dataset_path = _check_output(out or config.dataset)
    vocab_path = _check_output(config.vocab)
    manifest_path = os.path.splitext(dataset_path)[0] + ".manifest.json"

    vocabulary, dataset = generate(config.generate)
    save_vocabulary(vocabulary, vocab_path)
    save_dataset(dataset, dataset_path)
    write_json(generation_manifest(config.generate, vocabulary, dataset), manifest_path)
    return dataset_path


def cmd_train(config, out=None):
    """
    Trains on the configured dataset and writes the checkpoint plus a metrics CSV with one row per iteration.

    A diverged run writes its diagnostics to divergence.json in the output directory before re-raising.

    :return: (checkpoint path, metrics history).
    """
    checkpoint_path = _check_output(out or config.checkpoint)
    metrics_path = _check_output(config.output_path("metrics.csv"))

    vocabulary = load_vocabulary(config.vocab)
    dataset = load_dataset(config.dataset)
    train_config = config.training_config()
    _check_image_size(dataset, train_config.model)

    try:
        store, history = train(dataset, vocabulary, train_config)
    except TrainingDiverged as err:
        write_json(
            {"iteration": err.iteration, "batch_id": err.batch_id, "diagnostics": err.diagnostics},
            config.output_path("divergence.json"),
        )
        raise

    save_checkpoint(checkpoint_path, store.params, train_config.to_dict(), vocabulary, iteration=len(history))
    write_metrics_csv(history, metrics_path)
    return checkpoint_path, history


def cmd_infer(config, out=None):
    """
    Runs the stored model over every scene of the dataset in file order.

    :return: (detections path, list of Detection).
    """
    detections_path = _check_output(out or config.detections)
    vocabulary = load_vocabulary(config.vocab)
    model, params, _ = load_model(config.checkpoint, vocabulary)
    dataset = load_dataset(config.dataset)

    detections = []
    for scene in dataset:
        detections.extend(model.detect(scene, params, mode=config.mode))
    log.info("Inference in %s mode over %d scenes" % (config.mode, len(dataset)))

    save_detections(detections, detections_path)
    return detections_path, detections


def cmd_eval(config, out=None, stream=None):
    """
    Evaluates a detections file, prints the result table and writes the JSON report.

    :param stream: Where the table is printed, defaults to stdout.
    :return: EvalResult.
    """
    report_path = _check_output(out or config.output_path("eval_%s.json" % config.protocol))
    vocabulary = load_vocabulary(config.vocab)
    dataset = load_dataset(config.dataset)
    detections = load_detections(config.detections)
    train_dataset = load_dataset(config.train_dataset) if config.train_dataset else None

    result = evaluate(detections, dataset, vocabulary, protocol=config.protocol, train_dataset=train_dataset)
    write_json(result.to_dict(), report_path)
    if config.pr_curves:
        write_pr_csv(result, config.output_path("pr_%s.csv" % config.protocol))

    stream = stream or sys.stdout
    stream.write(format_table(result, vocabulary) + "\n")
    return result


def cmd_gradcheck(config, out=None):
    """
    Compares analytic and numeric gradients of every trainable tensor on a random scene.

    The vocabulary file is used when it exists, otherwise the generator vocabulary is built from the generate section.

    :return: GradCheckReport, GradientCheckFailed is raised after the report is written when the check fails.
    """
    report_path = _check_output(out or config.output_path("gradcheck.json"))
    if os.path.exists(config.vocab):
        vocabulary = load_vocabulary(config.vocab)
    else:
        vocabulary = build_vocabulary(config.generate)

    train_config = config.training_config()
    train_config = train_config.copy(w_reg=train_config.w_reg or 1.0)
    model = HOIModel(train_config.model.copy(image_size=config.gradcheck_image_size), vocabulary)

    rng = np.random.default_rng(train_config.seed)
    params = model.init_params(rng)
    scene, pixels = random_scene(rng, vocabulary, image_size=config.gradcheck_image_size)
    report = check_gradients(
        model,
        params,
        scene,
        pixels,
        config=train_config,
        tolerance=config.gradcheck_tolerance,
        sample=config.gradcheck_sample,
        rng=rng,
    )

    write_json(
        {
            "passed": report.passed,
            "tolerance": report.tolerance,
            "max_error": report.max_error,
            "worst_parameter": report.worst_parameter,
            "errors": report.errors,
            "max_entry_error": report.max_entry_error,
            "entry_errors": report.entry_errors or {},
        },
        report_path,
    )
    if not report.passed:
        raise GradientCheckFailed(report.worst_parameter, report.max_error, report.tolerance)
    return report


def embedding_rows(model, params, dataset):
    """
    Yields (label, vector) for every transferred pair feature followed by every knowledge bank row.

    Pairs are labelled "pair:<image>:<pair index>:<prompt>" with the prompt of their top scoring valid HOI class and
    bank rows "bank:<hoi id>:<prompt>".
    """
    vocabulary = model.vocabulary
    for scene in dataset:
        fwd = model.forward_scene(scene, params)
        for m, (_, o) in enumerate(fwd.pairs):
            candidates = vocabulary.verbs_for_object(scene.proposals[o].object_class)
            if candidates:
                verb, _ = max(candidates, key=lambda c: (fwd.S[m, c[0]], -c[1]))
                prompt = vocabulary.make_prompt((verb, scene.proposals[o].object_class))
            else:
                prompt = "unlabelled"
            yield "pair:%s:%d:%s" % (scene.image_id, m, prompt), fwd.v_hat[m]

    for hoi_id, prompt in enumerate(vocabulary.prompts()):
        yield "bank:%d:%s" % (hoi_id, prompt), params[BANK][hoi_id]


def cmd_export_embeddings(config, out=None):
    """
    Writes the pair and knowledge bank features of a trained model as CSV rows of a label and D values.

    :return: (CSV path, number of rows).
    """
    export_path = _check_output(out or config.output_path("embeddings.csv"))
    vocabulary = load_vocabulary(config.vocab)
    model, params, _ = load_model(config.checkpoint, vocabulary)
    dataset = load_dataset(config.dataset)

    count = write_embeddings_csv(embedding_rows(model, params, dataset), export_path)
    return export_path, count
