#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

import hashlib

import numpy as np

_TRUE_STRINGS = {'true', 'yes', 'on', 'y', 't', '1'}
_FALSE_STRINGS = {'false', 'no', 'off', 'n', 'f', '0', ''}


def asbool(obj):
    """
    Convert a config value into a boolean.

    :param obj: a bool, number or string
    :return: bool
    """
    if isinstance(obj, str):
        value = obj.strip().lower()
        if value in _TRUE_STRINGS:
            return True
        if value in _FALSE_STRINGS:
            return False
        raise ValueError(f'String is not true/false: "{obj}"')
    return bool(obj)


def get_setting(config, key, default=None):
    """
    Look up a dotted setting (e.g. ``sj.n_permutations``) in a nested config dict.

    :param config: nested dict of sections, or None
    :param key: dotted key, section first
    :param default: value returned when any part of the key is missing
    :return: the setting value or the default
    """
    node = config or {}
    for part in key.split('.'):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def derive_seed(master_seed, *keys):
    """
    Derive an independent 32-bit seed from a master seed and a tuple of integer keys.

    The same (master_seed, keys) always gives the same seed, whatever order the callers
    run in.

    :param master_seed: run-level seed
    :param keys: integer keys, e.g. (cell index, replication index)
    :return: int
    """
    sequence = np.random.SeedSequence([int(master_seed), *[int(k) for k in keys]])
    return int(sequence.generate_state(1)[0])


def fingerprint_arrays(*arrays):
    """
    Short content hash of numpy arrays, used to check two fits saw the same data.

    :return: hex digest string
    """
    digest = hashlib.sha1()
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(str(array.shape).encode())
        digest.update(array.tobytes())
    return digest.hexdigest()[:16]


def parse_number_list(value, cast=float):
    """
    Split a whitespace or comma separated config value into numbers.

    :param value: string, number or list
    :param cast: type to cast each item to
    :return: list
    """
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    if isinstance(value, (int, float)):
        return [cast(value)]
    return [cast(v) for v in value.replace(',', ' ').split()]
