# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import copy
import json


class BaseConfig(object):
    """Settings object with keyword construction and validated updates.

    Subclasses declare their options and default values in `_defaults` and may override `_validate()` to check the
    combined values after every update. Options that hold another BaseConfig are listed in `_nested` and are set from
    either an instance or a plain dict.
    """

    _defaults = {}
    _nested = {}

    def __init__(self, **config):
        for key, value in self._defaults.items():
            setattr(self, key, copy.deepcopy(value))
        for key, config_type in self._nested.items():
            setattr(self, key, config_type())
        self.set(**config)

    def set(self, **config):
        for key, value in config.items():
            if key.startswith("_"):
                raise ValueError("Cannot set private attribute %s" % key)

            elif key in self._nested:
                nested = getattr(self, key)
                if isinstance(value, BaseConfig):
                    value = value.to_dict()
                nested.set(**(value or {}))

            elif key not in self._defaults:
                raise ValueError("Unknown %s option %s" % (type(self).__name__, key))

            else:
                setattr(self, key, value)

        self._validate()
        return self

    def _validate(self):
        pass

    def to_dict(self):
        data = {}
        for key in self._defaults:
            value = getattr(self, key)
            data[key] = list(value) if isinstance(value, tuple) else value
        for key in self._nested:
            data[key] = getattr(self, key).to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**(data or {}))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def copy(self, **overrides):
        return type(self).from_dict(copy.deepcopy(self.to_dict())).set(**overrides)

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        values = ", ".join("%s=%r" % (k, v) for k, v in sorted(self.to_dict().items()))
        return "%s(%s)" % (type(self).__name__, values)
