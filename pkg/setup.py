#!/usr/bin/env python
# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

from setuptools import setup

# Editable installs on setuptools/pip versions without PEP 660 support.
setup()
