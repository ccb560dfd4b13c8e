# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import struct

from cryptography.hazmat.primitives import hashes


def to_bytes(value, encoding="utf-8"):
    """
    Makes sure the value is encoded as a byte string.

    :param value: The Python string value to encode.
    :param encoding: The encoding to use.
    :return: The byte string that was encoded.
    """
    if isinstance(value, bytes):
        return value
    return value.encode(encoding)


def to_text(value, encoding="utf-8"):
    """
    Makes sure the value is decoded as a text string.

    :param value: The Python byte string value to decode.
    :param encoding: The encoding to use.
    :return: The text string that was decoded.
    """
    if isinstance(value, str):
        return value
    return value.decode(encoding)


def sha256_digest(data):
    """
    Computes the SHA-256 digest of the data.

    :param data: Text or bytes to digest, text is UTF-8 encoded first.
    :return: The 32 byte digest.
    """
    digest = hashes.Hash(hashes.SHA256())
    digest.update(to_bytes(data))
    return digest.finalize()


def stable_hash64(value):
    """
    Returns a 64-bit unsigned integer derived from the SHA-256 digest of the value. Unlike the builtin hash() this
    does not change between interpreter runs so it can seed random generators.

    :param value: Text or bytes to hash.
    :return: An int in the range [0, 2**64).
    """
    return struct.unpack(">Q", sha256_digest(value)[:8])[0]
