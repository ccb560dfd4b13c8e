# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import logging

from hoiclient._commands import (
    cmd_eval,
    cmd_export_embeddings,
    cmd_gen_data,
    cmd_gradcheck,
    cmd_infer,
    cmd_train,
    load_model,
)
from hoiclient._config import RunConfig, load_run_config

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())
