# SPDX-FileCopyrightText: © 2026 The ringscope Authors
# SPDX-License-Identifier: Apache-2.0
"""Activation capture through a device-side ring pair with asynchronous export."""

import json

from ringscope._core import (
    SENTINEL,
    ConfigError,
    MetaMismatch,
    OutOfOrderRelease,
    PolicyUnderestimate,
    Ring,
    __version__,
    crc32,
    decode_descriptor,
    default_config,
    dtype_width,
    encode_descriptor,
    gather_compact,
    main,
    normalize_config,
    read_dataset,
    simulate,
    verify,
)


def load_config(path):
    """Read a JSON configuration file and return it as a dict."""
    with open(path, encoding="utf-8") as f:
        return json.loads(normalize_config(f.read()))


def run(config=None, **kwargs):
    """Simulate `config` (dict, JSON text or None for the default)."""
    if config is None:
        text = default_config()
    elif isinstance(config, str):
        text = config
    else:
        text = json.dumps(config)
    return simulate(text, **kwargs)


__all__ = [
    "SENTINEL",
    "ConfigError",
    "MetaMismatch",
    "OutOfOrderRelease",
    "PolicyUnderestimate",
    "Ring",
    "__version__",
    "crc32",
    "decode_descriptor",
    "default_config",
    "dtype_width",
    "encode_descriptor",
    "gather_compact",
    "load_config",
    "main",
    "normalize_config",
    "read_dataset",
    "run",
    "simulate",
    "verify",
]
