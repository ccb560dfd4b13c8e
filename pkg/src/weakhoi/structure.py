# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

"""
A small declarative framework for fixed layout binary records. A Structure is an ordered set of named Field objects,
each field knows how to pack its value to bytes and how to parse it back. Field sizes and defaults can be lambdas
that receive the owning structure so length prefixes can be derived from later fields.

This is what the checkpoint container is built on.
"""

import copy
import struct
import types
from abc import ABCMeta, abstractmethod

import numpy as np

from weakhoi._text import to_bytes, to_text

TAB = "    "


class InvalidFieldDefinition(Exception):
    pass


def _indent_lines(string, prefix):
    return "".join(prefix + line if line.strip() else line for line in string.splitlines(True))


class Structure(object):
    def __init__(self):
        # self.fields is set by the subclass before calling this, the metadata needs the full structure to be
        # available as lambda sizes and error messages reference it.
        for name, field in self.fields.items():
            field.structure = self
            field.name = name
            field.set_value(field.default)

    def __str__(self):
        field_strings = []
        for name, field in self.fields.items():
            field_strings.append(_indent_lines("%s = %s" % (name, str(field)), TAB))

        return "%s:\n%s" % (self.__class__.__name__, "\n".join(field_strings))

    def __setitem__(self, key, value):
        field = self._get_field(key)
        field.set_value(value)

    def __getitem__(self, key):
        return self._get_field(key)

    def __len__(self):
        return sum(len(field) for field in self.fields.values())

    def pack(self):
        return b"".join(field.pack() for field in self.fields.values())

    def unpack(self, data):
        mem = memoryview(data)
        for field in self.fields.values():
            mem = field.unpack(mem)
        return bytes(mem)  # remaining data

    def _get_field(self, key):
        field = self.fields.get(key, None)
        if field is None:
            raise ValueError("Structure does not contain field %s" % key)
        return field


class Field(metaclass=ABCMeta):
    def __init__(self, little_endian=True, default=None, size=None):
        """
        The base class of a Field object. There should be little need to use this directly, it is the framework the
        concrete *Field classes implement.

        :param little_endian: The byte order to pack numbers as, False means big endian.
        :param default: The default value of the field, can be a lambda that receives the structure.
        :param size: The packed size of the field, can be an int, lambda or None for a trailing variable length field.
        """
        field_type = self.__class__.__name__
        self.little_endian = little_endian

        if not (size is None or isinstance(size, int) or isinstance(size, types.LambdaType)):
            raise InvalidFieldDefinition("%s size for field must be an int, lambda or None" % field_type)
        self.size = size
        self.default = default
        self.value = None
        self.name = None
        self.structure = None

    def __str__(self):
        return self._to_string()

    def __len__(self):
        return self._get_packed_size()

    def pack(self):
        value = self._get_calculated_value(self.value)
        packed_value = self._pack_value(value)
        size = self._get_calculated_size(self.size, packed_value)
        if len(packed_value) != size:
            raise ValueError(
                "Invalid packed data length for field %s of %d does not fit field size of %d"
                % (self.name, len(packed_value), size)
            )

        return packed_value

    def get_value(self):
        """
        Returns the value set for the field with any lambda values resolved.
        """
        return self._get_calculated_value(self.value)

    def set_value(self, value):
        if isinstance(value, memoryview):
            value = bytes(value)
        self.value = self._parse_value(value)

    def unpack(self, data):
        """
        Sets the field value from the start of data based on the field size.

        :param data: The bytes or memoryview to unpack from.
        :return: The remaining data for subsequent fields.
        """
        size = self._get_calculated_size(self.size, data)
        if len(data) < size:
            raise ValueError(
                "Not enough data to unpack field %s, expecting %d but got %d" % (self.name, size, len(data))
            )
        self.set_value(data[0:size])
        return data[size:]

    @abstractmethod
    def _pack_value(self, value):
        pass  # pragma: no cover

    @abstractmethod
    def _parse_value(self, value):
        pass  # pragma: no cover

    @abstractmethod
    def _get_packed_size(self):
        pass  # pragma: no cover

    @abstractmethod
    def _to_string(self):
        pass  # pragma: no cover

    def _get_calculated_value(self, value):
        if isinstance(value, types.LambdaType):
            return self._get_calculated_value(value(self.structure))
        # one final parse in case the lambda returned a different type
        return self._parse_value(value)

    def _get_calculated_size(self, size, data):
        if size is None:
            return len(data)
        elif isinstance(size, types.LambdaType):
            return self._get_calculated_size(size(self.structure), data)
        else:
            return size

    def _get_struct_format(self, size, unsigned=True):
        if isinstance(size, types.LambdaType):
            size = size(self.structure)

        struct_format = {1: "B", 2: "H", 4: "L", 8: "Q"}
        if size not in struct_format:
            raise InvalidFieldDefinition("Cannot struct format of size %s" % size)
        format_char = struct_format[size]
        if not unsigned:
            format_char = format_char.lower()

        return "%s%s" % ("<" if self.little_endian else ">", format_char)


class IntField(Field):
    def __init__(self, size, unsigned=True, **kwargs):
        """
        Stores an int packed as 1, 2, 4 or 8 bytes.

        :param size: The size of the integer when packed.
        :param unsigned: Whether the int is unsigned.
        """
        if size not in [1, 2, 4, 8]:
            raise InvalidFieldDefinition("IntField size must have a value of 1, 2, 4, or 8 not %s" % str(size))
        self.unsigned = unsigned
        super(IntField, self).__init__(size=size, **kwargs)

    def _pack_value(self, value):
        return struct.pack(self._get_struct_format(self.size, self.unsigned), value)

    def _parse_value(self, value):
        if value is None:
            int_value = 0
        elif isinstance(value, types.LambdaType):
            int_value = value
        elif isinstance(value, bytes):
            int_value = struct.unpack(self._get_struct_format(self.size, self.unsigned), value)[0]
        elif isinstance(value, (int, np.integer)):
            int_value = int(value)
        else:
            raise TypeError("Cannot parse value for field %s of type %s to an int" % (self.name, type(value).__name__))
        return int_value

    def _get_packed_size(self):
        return self.size

    def _to_string(self):
        return str(self._get_calculated_value(self.value))


class EnumField(IntField):
    def __init__(self, enum_type, enum_strict=True, **kwargs):
        self.enum_type = enum_type
        self.enum_strict = enum_strict
        super(EnumField, self).__init__(**kwargs)

    def _parse_value(self, value):
        int_value = super(EnumField, self)._parse_value(value)
        if isinstance(int_value, types.LambdaType):
            return int_value

        valid = int_value in [v for k, v in vars(self.enum_type).items() if not k.startswith("_")]
        if not valid and int_value != 0 and self.enum_strict:
            raise ValueError("Enum value %d does not exist in enum type %s" % (int_value, self.enum_type))
        return int_value

    def _to_string(self):
        value = self._get_calculated_value(self.value)
        for enum, enum_value in vars(self.enum_type).items():
            if not enum.startswith("_") and value == enum_value:
                return "(%d) %s" % (value, enum)
        return "(%d) UNKNOWN_ENUM" % value


class BytesField(Field):
    """
    Stores a raw bytes value, the most universal field type.
    """

    def _pack_value(self, value):
        return value

    def _parse_value(self, value):
        if value is None:
            bytes_value = b""
        elif isinstance(value, types.LambdaType):
            bytes_value = value
        elif isinstance(value, Structure):
            bytes_value = value.pack()
        elif isinstance(value, bytes):
            bytes_value = value
        else:
            raise TypeError(
                "Cannot parse value for field %s of type %s to a byte string" % (self.name, type(value).__name__)
            )
        return bytes_value

    def _get_packed_size(self):
        return len(self._get_calculated_value(self.value))

    def _to_string(self):
        bytes_value = self._get_calculated_value(self.value)
        if len(bytes_value) > 16:
            return "<%d bytes>" % len(bytes_value)
        return bytes_value.hex().upper()


class TextField(BytesField):
    def __init__(self, encoding="utf-8", **kwargs):
        self.encoding = encoding
        super(TextField, self).__init__(**kwargs)

    def _pack_value(self, value):
        return to_bytes(value, encoding=self.encoding)

    def _parse_value(self, value):
        if value is None:
            text_value = ""
        elif isinstance(value, bytes):
            text_value = to_text(value, encoding=self.encoding)
        elif isinstance(value, (str, types.LambdaType)):
            text_value = value
        else:
            raise TypeError(
                "Cannot parse value for field %s of type %s to a text string" % (self.name, type(value).__name__)
            )
        return text_value

    def _get_packed_size(self):
        return len(to_bytes(self._get_calculated_value(self.value), encoding=self.encoding))

    def _to_string(self):
        return self._get_calculated_value(self.value)


class ArrayField(Field):
    def __init__(self, shape=None, **kwargs):
        """
        Stores a numpy float64 array as raw IEEE-754 doubles. The shape is not part of the packed data, set it as a
        lambda that reads a sibling field so unpacking can restore the dimensions.

        :param shape: A tuple or lambda returning the tuple of the array dimensions.
        """
        self.shape = shape
        super(ArrayField, self).__init__(**kwargs)

    def _pack_value(self, value):
        dtype = "<f8" if self.little_endian else ">f8"
        return np.ascontiguousarray(value, dtype=dtype).tobytes()

    def _parse_value(self, value):
        if value is None:
            array_value = np.zeros(0, dtype=np.float64)
        elif isinstance(value, types.LambdaType):
            array_value = value
        elif isinstance(value, bytes):
            dtype = "<f8" if self.little_endian else ">f8"
            array_value = np.frombuffer(value, dtype=dtype).astype(np.float64)
            shape = self.shape(self.structure) if isinstance(self.shape, types.LambdaType) else self.shape
            if shape is not None:
                array_value = array_value.reshape(tuple(shape))
        elif isinstance(value, (np.ndarray, list, tuple, float, int)):
            array_value = np.array(value, dtype=np.float64)
        else:
            raise TypeError(
                "Cannot parse value for field %s of type %s to an array" % (self.name, type(value).__name__)
            )
        return array_value

    def _get_packed_size(self):
        return self._get_calculated_value(self.value).size * 8

    def _to_string(self):
        array_value = self._get_calculated_value(self.value)
        return "float64%s" % (list(array_value.shape),)


class ListField(Field):
    def __init__(self, list_count=None, list_type=BytesField(), unpack_func=None, **kwargs):
        """
        Stores a list of values of the same field type. Either list_count together with a fixed size list_type, or
        an unpack_func lambda for variable length entries, must be set so the list can be unpacked.

        :param list_count: The number of entries, an int or lambda.
        :param list_type: The Field definition each entry is parsed as.
        :param unpack_func: A lambda taking (structure, data) that returns the list of entries.
        """
        if list_count is not None and not isinstance(list_count, (int, types.LambdaType)):
            raise InvalidFieldDefinition("ListField list_count must be an int, lambda, or None")
        self.list_count = list_count

        if not isinstance(list_type, Field):
            raise InvalidFieldDefinition("ListField list_type must be a Field definition")
        self.list_type = list_type

        if unpack_func is not None and not isinstance(unpack_func, types.LambdaType):
            raise InvalidFieldDefinition("ListField unpack_func must be a lambda function or None")
        elif unpack_func is None and (list_count is None or list_type.size is None):
            raise InvalidFieldDefinition(
                "ListField must either define unpack_func as a lambda or set list_count and a list_type with a size"
            )
        self.unpack_func = unpack_func

        super(ListField, self).__init__(**kwargs)

    def __getitem__(self, item):
        return self.get_value()[item]

    def get_value(self):
        value = self.value
        if isinstance(value, types.LambdaType):
            value = self._get_calculated_value(value)
        return [entry.get_value() if isinstance(entry, Field) else entry for entry in value]

    def _pack_value(self, value):
        return b"".join(entry.pack() for entry in value)

    def _parse_value(self, value):
        if value is None:
            list_value = []
        elif isinstance(value, types.LambdaType):
            return value
        elif isinstance(value, bytes) and self.unpack_func is not None:
            list_value = self.unpack_func(self.structure, value)
        elif isinstance(value, bytes):
            list_value = self._create_list_from_bytes(self.list_count, value)
        elif isinstance(value, (list, tuple)):
            list_value = list(value)
        else:
            raise TypeError("Cannot parse value for field %s of type %s to a list" % (self.name, type(value).__name__))
        return [self._parse_sub_value(v) for v in list_value]

    def _parse_sub_value(self, value):
        if isinstance(value, (Field, Structure)):
            return value
        new_field = copy.deepcopy(self.list_type)
        new_field.name = "%s list entry" % self.name
        new_field.set_value(value)
        return new_field

    def _get_packed_size(self):
        return sum(len(entry) for entry in self._get_calculated_value(self.value))

    def _to_string(self):
        list_value = self._get_calculated_value(self.value)
        if not list_value:
            return "[]"
        return "[\n%s\n]" % ",\n".join(_indent_lines(str(v), TAB) for v in list_value)

    def _create_list_from_bytes(self, list_count, value):
        if isinstance(list_count, types.LambdaType):
            return self._create_list_from_bytes(list_count(self.structure), value)

        list_value = []
        for _ in range(list_count):
            new_field = copy.deepcopy(self.list_type)
            value = new_field.unpack(value)
            list_value.append(new_field)
        return list_value
