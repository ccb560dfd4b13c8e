# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import logging

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


__version__ = "0.1.0"
