# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import collections
import json
import logging

from weakhoi._text import sha256_digest
from weakhoi.exceptions import InvalidArgument, VocabularyError

log = logging.getLogger(__name__)

VOWELS = "aeiou"
DEFAULT_RARE_THRESHOLD = 10


class RoleTag(object):
    """
    The semantic role the object plays in the interaction, picks the prompt template.
    """

    OBJECT = "object"
    INSTRUMENT = "instrument"


VerbEntry = collections.namedtuple("VerbEntry", ["id", "name", "gerund"])
ObjectEntry = collections.namedtuple("ObjectEntry", ["id", "name"])
Combo = collections.namedtuple("Combo", ["hoi_id", "verb_id", "object_id", "role"])


def _article(noun):
    # Naive: only looks at the first letter, "an hour" or "a unicorn" are wrong.
    return "an" if noun[:1].lower() in VOWELS else "a"


class HOIVocabulary(object):
    def __init__(self, verbs, objects, combos, rare_threshold=DEFAULT_RARE_THRESHOLD):
        """
        The HOI label space: A verbs, C objects and the N valid (verb, object) combinations. Immutable after creation.

        :param verbs: List of VerbEntry, ids must be 0..A-1.
        :param objects: List of ObjectEntry, ids must be 0..C-1.
        :param combos: List of Combo, hoi_ids must be 0..N-1.
        :param rare_threshold: Classes with fewer training instances than this are rare.
        """
        self._verbs = tuple(sorted(verbs, key=lambda v: v.id))
        self._objects = tuple(sorted(objects, key=lambda o: o.id))
        self._combos = tuple(sorted(combos, key=lambda c: c.hoi_id))
        self.rare_threshold = int(rare_threshold)
        self._validate()

        self._index = {(c.verb_id, c.object_id): c.hoi_id for c in self._combos}
        self._verbs_by_object = collections.defaultdict(list)
        for combo in self._combos:
            self._verbs_by_object[combo.object_id].append((combo.verb_id, combo.hoi_id))

    def _validate(self):
        if not self._verbs or not self._objects or not self._combos:
            raise VocabularyError("A vocabulary needs at least one verb, one object and one combination")

        for name, entries in [("verb", self._verbs), ("object", self._objects)]:
            ids = [e.id for e in entries]
            if ids != list(range(len(entries))):
                raise VocabularyError("%s ids must be contiguous from 0, got %s" % (name, ids))

        if [c.hoi_id for c in self._combos] != list(range(len(self._combos))):
            raise VocabularyError("hoi_ids must be contiguous from 0")

        seen = set()
        for combo in self._combos:
            if not (0 <= combo.verb_id < len(self._verbs) and 0 <= combo.object_id < len(self._objects)):
                raise VocabularyError("Combination %d references an unknown verb or object" % combo.hoi_id)
            if combo.role not in (RoleTag.OBJECT, RoleTag.INSTRUMENT):
                raise VocabularyError("Combination %d has unknown role tag '%s'" % (combo.hoi_id, combo.role))
            key = (combo.verb_id, combo.object_id)
            if key in seen:
                raise VocabularyError("Duplicate combination verb %d object %d" % key)
            seen.add(key)

        if self.rare_threshold < 0:
            raise VocabularyError("rare_threshold must not be negative")

    @property
    def verbs(self):
        return self._verbs

    @property
    def objects(self):
        return self._objects

    @property
    def combos(self):
        return self._combos

    @property
    def num_verbs(self):
        return len(self._verbs)

    @property
    def num_objects(self):
        return len(self._objects)

    @property
    def num_combos(self):
        return len(self._combos)

    def combo(self, hoi_id):
        if not 0 <= hoi_id < len(self._combos):
            raise InvalidArgument("hoi_id %s is out of range [0, %d)" % (hoi_id, len(self._combos)))
        return self._combos[hoi_id]

    def hoi_index(self, verb_id, object_id):
        """
        Returns the hoi_id of the (verb, object) combination or None when the combination is not part of the
        vocabulary.
        """
        if not 0 <= verb_id < len(self._verbs):
            raise InvalidArgument("verb_id %s is out of range [0, %d)" % (verb_id, len(self._verbs)))
        if not 0 <= object_id < len(self._objects):
            raise InvalidArgument("object_id %s is out of range [0, %d)" % (object_id, len(self._objects)))
        return self._index.get((verb_id, object_id))

    def verbs_for_object(self, object_id):
        """List of (verb_id, hoi_id) valid for the object class."""
        return list(self._verbs_by_object.get(object_id, []))

    def make_prompt(self, combo, role=None):
        """
        Converts a HOI label to a text prompt, e.g. (drive, car) becomes 'a person driving a car' and the instrument
        role (cut, knife) becomes 'a person cutting with knife'.

        :param combo: A (verb_id, object_id) tuple.
        :param role: The RoleTag template to use, defaults to the role stored with the combination.
        :return: The prompt text.
        """
        verb_id, object_id = combo
        hoi_id = self._index.get((verb_id, object_id))
        if hoi_id is None:
            raise InvalidArgument("Combination verb %s object %s is not part of the vocabulary" % (verb_id, object_id))

        role = role or self._combos[hoi_id].role
        gerund = self._verbs[verb_id].gerund
        noun = self._objects[object_id].name
        if role == RoleTag.OBJECT:
            return "a person %s %s %s" % (gerund, _article(noun), noun)
        elif role == RoleTag.INSTRUMENT:
            return "a person %s with %s" % (gerund, noun)
        raise InvalidArgument("Unknown role tag '%s'" % role)

    def prompts(self):
        return [self.make_prompt((c.verb_id, c.object_id)) for c in self._combos]

    def to_dict(self):
        return {
            "verbs": [{"id": v.id, "name": v.name, "gerund": v.gerund} for v in self._verbs],
            "objects": [{"id": o.id, "name": o.name} for o in self._objects],
            "combos": [
                {"hoi_id": c.hoi_id, "verb_id": c.verb_id, "object_id": c.object_id, "role": c.role}
                for c in self._combos
            ],
            "rare_threshold": self.rare_threshold,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            verbs = [VerbEntry(int(v["id"]), v["name"], v["gerund"]) for v in data["verbs"]]
            objects = [ObjectEntry(int(o["id"]), o["name"]) for o in data["objects"]]
            combos = [
                Combo(int(c["hoi_id"]), int(c["verb_id"]), int(c["object_id"]), c.get("role", RoleTag.OBJECT))
                for c in data["combos"]
            ]
        except (KeyError, TypeError, ValueError) as err:
            raise VocabularyError("Malformed vocabulary: %s" % err) from err

        return cls(verbs, objects, combos, rare_threshold=data.get("rare_threshold", DEFAULT_RARE_THRESHOLD))

    def fingerprint(self):
        """A stable hex digest of the label space, stored in checkpoints to detect mismatches."""
        return sha256_digest(json.dumps(self.to_dict(), sort_keys=True)).hex()

    def __eq__(self, other):
        return isinstance(other, HOIVocabulary) and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self == other


def load_vocabulary(path):
    log.info("Loading vocabulary from %s" % path)
    try:
        with open(path, mode="r", encoding="utf-8") as fd:
            data = json.load(fd)
    except ValueError as err:
        raise VocabularyError("Vocabulary file %s is not valid JSON: %s" % (path, err)) from err
    return HOIVocabulary.from_dict(data)


def save_vocabulary(vocabulary, path):
    with open(path, mode="w", encoding="utf-8") as fd:
        json.dump(vocabulary.to_dict(), fd, indent=2, sort_keys=True)
        fd.write("\n")
