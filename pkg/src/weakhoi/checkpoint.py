# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

"""
Binary checkpoint container.

    magic "WSHOICKP" | version | iteration | vocabulary fingerprint | config JSON | tensors... | SHA-256 of all before

Every tensor is stored as a TensorRecord (name, dtype, shape, little endian float64 data) sorted by name so the same
parameters always give the same bytes.
"""

import collections
import json
import logging

import numpy as np

from weakhoi._text import sha256_digest
from weakhoi.exceptions import CheckpointError, VocabularyError
from weakhoi.structure import (
    ArrayField,
    BytesField,
    EnumField,
    IntField,
    ListField,
    Structure,
    TextField,
)

log = logging.getLogger(__name__)

MAGIC = b"WSHOICKP"
VERSION = 1
DIGEST_SIZE = 32

Checkpoint = collections.namedtuple("Checkpoint", ["params", "config", "iteration", "fingerprint"])


class TensorDType(object):
    FLOAT64 = 1


class TensorRecord(Structure):
    def __init__(self):
        self.fields = collections.OrderedDict(
            [
                ("name_length", IntField(size=2, default=lambda s: len(s["name"]))),
                ("name", TextField(size=lambda s: s["name_length"].get_value())),
                ("dtype", EnumField(size=1, enum_type=TensorDType, default=TensorDType.FLOAT64)),
                ("ndim", IntField(size=1, default=lambda s: len(s["shape"].get_value()))),
                (
                    "shape",
                    ListField(
                        size=lambda s: s["ndim"].get_value() * 4,
                        list_count=lambda s: s["ndim"].get_value(),
                        list_type=IntField(size=4),
                    ),
                ),
                ("data_length", IntField(size=8, default=lambda s: len(s["data"]))),
                (
                    "data",
                    ArrayField(
                        size=lambda s: s["data_length"].get_value(),
                        shape=lambda s: s["shape"].get_value(),
                    ),
                ),
            ]
        )
        super(TensorRecord, self).__init__()


def _unpack_tensors(structure, data):
    records = []
    remaining = data
    for _ in range(structure["tensor_count"].get_value()):
        record = TensorRecord()
        remaining = record.unpack(remaining)
        records.append(record)
    if remaining:
        raise ValueError("%d trailing bytes after the tensor records" % len(remaining))
    return records


class CheckpointBody(Structure):
    def __init__(self):
        self.fields = collections.OrderedDict(
            [
                ("magic", BytesField(size=8, default=MAGIC)),
                ("version", IntField(size=2, default=VERSION)),
                ("iteration", IntField(size=8)),
                ("fingerprint_length", IntField(size=2, default=lambda s: len(s["fingerprint"]))),
                ("fingerprint", TextField(size=lambda s: s["fingerprint_length"].get_value())),
                ("config_length", IntField(size=4, default=lambda s: len(s["config"]))),
                ("config", TextField(size=lambda s: s["config_length"].get_value())),
                ("tensor_count", IntField(size=4, default=lambda s: len(s["tensors"].get_value()))),
                ("tensors_length", IntField(size=8, default=lambda s: len(s["tensors"]))),
                (
                    "tensors",
                    ListField(
                        size=lambda s: s["tensors_length"].get_value(),
                        unpack_func=lambda s, d: _unpack_tensors(s, d),
                    ),
                ),
            ]
        )
        super(CheckpointBody, self).__init__()


def pack_checkpoint(params, config, fingerprint, iteration=0):
    """
    Serialises parameters into checkpoint bytes.

    :param params: dict of name to numpy array.
    :param config: JSON serialisable dict of the run configuration.
    :param fingerprint: The vocabulary fingerprint.
    :param iteration: The number of completed training iterations.
    :return: bytes.
    """
    records = []
    for name in sorted(params):
        record = TensorRecord()
        record["name"] = name
        record["shape"] = list(np.shape(params[name]))
        record["data"] = np.asarray(params[name], dtype=np.float64)
        records.append(record)

    body = CheckpointBody()
    body["iteration"] = iteration
    body["fingerprint"] = fingerprint
    body["config"] = json.dumps(config, sort_keys=True)
    body["tensors"] = records
    data = body.pack()
    return data + sha256_digest(data)


def unpack_checkpoint(data):
    """
    Parses checkpoint bytes after verifying the trailing digest.

    :return: Checkpoint with config as a dict.
    """
    if len(data) < DIGEST_SIZE + len(MAGIC):
        raise CheckpointError("Checkpoint is truncated, only %d bytes" % len(data))

    payload, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if not payload.startswith(MAGIC):
        raise CheckpointError("Not a checkpoint, bad magic %r" % bytes(payload[: len(MAGIC)]))
    if sha256_digest(payload) != digest:
        raise CheckpointError("Checkpoint digest mismatch, the file is corrupted")

    body = CheckpointBody()
    try:
        remaining = body.unpack(payload)
    except (ValueError, TypeError, UnicodeDecodeError) as err:
        raise CheckpointError("Malformed checkpoint: %s" % err) from err
    if remaining:
        raise CheckpointError("Checkpoint has %d unexpected trailing bytes" % len(remaining))

    version = body["version"].get_value()
    if version != VERSION:
        raise CheckpointError("Unsupported checkpoint version %d, expecting %d" % (version, VERSION))

    params = {}
    for record in body["tensors"].get_value():
        params[record["name"].get_value()] = record["data"].get_value()

    try:
        config = json.loads(body["config"].get_value())
    except ValueError as err:
        raise CheckpointError("Checkpoint config is not valid JSON: %s" % err) from err

    return Checkpoint(params, config, body["iteration"].get_value(), body["fingerprint"].get_value())


def save_checkpoint(path, params, config, vocabulary, iteration=0):
    data = pack_checkpoint(params, config, vocabulary.fingerprint(), iteration=iteration)
    with open(path, mode="wb") as fd:
        fd.write(data)
    log.info("Wrote checkpoint with %d tensors at iteration %d to %s" % (len(params), iteration, path))


def load_checkpoint(path, vocabulary=None):
    """
    Reads a checkpoint file.

    :param path: The checkpoint path.
    :param vocabulary: When set the stored fingerprint must match it.
    :return: Checkpoint.
    """
    with open(path, mode="rb") as fd:
        checkpoint = unpack_checkpoint(fd.read())

    if vocabulary is not None and checkpoint.fingerprint != vocabulary.fingerprint():
        raise VocabularyError("Checkpoint %s was trained on a different vocabulary" % path)
    log.debug("Loaded checkpoint %s at iteration %d" % (path, checkpoint.iteration))
    return checkpoint
