#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

"""
Reading ini-style config and model-spec files into validated nested dicts, and turning
them into the option objects the library works with.
"""

import configparser
import json
import logging
import logging.config
import re
from functools import lru_cache
from pathlib import Path

import jsonschema

from ..model.spec import (
    ModelSpec,
    Theta,
    apply_restriction,
    heuristic_init,
    omega_pattern,
)
from .dgp import DgpConfig, true_theta, wide_spec
from .errors import ConfigException, SpecificationException
from .estimation import FitOptions, Sensitivity
from .experiment import DEFAULT_METHODS, FULL_SCALE_REPLICATIONS, ExperimentConfig
from .gauss import SJConfig
from .helpers import asbool, get_setting, parse_number_list
from .selection import CCLR3Form

log = logging.getLogger(__name__)

SCHEMA_DIR = Path(__file__).resolve().parent.parent / 'schemas'
LOGGING_SECTION = re.compile(
    r'^(loggers|handlers|formatters|logger_.*|handler_.*|formatter_.*)$'
)
_SECTION_LINE = re.compile(r'^\s*\[([^\]]+)\]')
_KEY_LINE = re.compile(r'^\s*([^\s=:#;\[][^=:]*?)\s*[=:]')


@lru_cache(maxsize=None)
def load_schema(name):
    """
    Load one of the bundled JSON schemas (``dgp``, ``experiment``, ``model``,
    ``settings``).
    """
    path = SCHEMA_DIR / f'{name}.schema.json'
    with path.open() as f:
        return json.load(f)


def _combined_schema(names, required):
    properties, needed = {}, []
    for name in names:
        schema = load_schema(name)
        properties.update(schema.get('properties', {}))
        if required:
            needed.extend(schema.get('required', []))
    return {
        'type': 'object',
        'properties': properties,
        'required': needed,
        'additionalProperties': False,
    }


def _line_numbers(text):
    lines, section = {}, None
    for number, line in enumerate(text.splitlines(), start=1):
        header = _SECTION_LINE.match(line)
        if header:
            section = header.group(1).strip()
            lines[(section, None)] = number
            continue
        key = _KEY_LINE.match(line)
        if key and section is not None:
            lines.setdefault((section, key.group(1).strip().lower()), number)
    return lines


def _coerce(value, prop):
    kind = prop.get('type')
    if kind == 'integer':
        return int(value)
    if kind == 'number':
        return float(value)
    if kind == 'boolean':
        return asbool(value)
    if kind == 'array':
        item_kind = prop.get('items', {}).get('type')
        if item_kind == 'integer':
            return parse_number_list(value, int)
        if item_kind == 'number':
            return parse_number_list(value, float)
        return value.replace(',', ' ').split()
    return value.strip()


def read_config(path, *schema_names, required=True):
    """
    Read an ini-style file into a nested dict of typed values and validate it.

    Logging sections (``[loggers]``, ``[handler_console]`` ...) are left out of the
    result; see :func:`configure_logging`.

    :param path: the file to read
    :param schema_names: bundled schemas the file must satisfy together
    :param required: whether the schemas' required sections must be present
    :return: dict of section -> key -> value
    :raises ConfigException: with an ``errors`` dict of field -> diagnostic
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigException(f'Cannot read config file {path}: {e}', {'file': str(e)})

    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=('#', ';')
    )
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as e:
        line = getattr(e, 'lineno', None)
        where = f'line {line}: ' if line else ''
        raise ConfigException(f'{path}: {where}{e}', {'file': f'{where}{e}'}) from e

    schema = _combined_schema(schema_names, required)
    lines = _line_numbers(text)
    config, errors = {}, {}
    for section in parser.sections():
        if LOGGING_SECTION.match(section):
            continue
        properties = schema['properties'].get(section, {}).get('properties', {})
        values = {}
        for key, raw in parser.items(section):
            try:
                values[key] = _coerce(raw, properties.get(key, {}))
            except ValueError as e:
                line = lines.get((section, key), '?')
                errors[f'{section}.{key}'] = f'line {line}: cannot read "{raw}" ({e})'
        config[section] = values

    if not errors:
        validator = jsonschema.Draft7Validator(schema)
        for error in sorted(validator.iter_errors(config), key=lambda e: list(e.path)):
            where = [str(part) for part in error.absolute_path]
            field = '.'.join(where) or '(file)'
            if len(where) >= 2:
                line = lines.get((where[0], where[1]))
            elif where:
                line = lines.get((where[0], None))
            else:
                line = None
            errors[field] = f'line {line}: {error.message}' if line else error.message

    if errors:
        details = '\n'.join(f'  {field}: {text}' for field, text in errors.items())
        raise ConfigException(f'Invalid config file {path}:\n{details}', errors)
    log.debug(f'Read {path} with sections {sorted(config)}')
    return config


def configure_logging(path):
    """
    Configure logging from the file if it carries a ``[loggers]`` section.

    :return: True if logging was configured
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.read(path)
    if not parser.has_section('loggers'):
        return False
    logging.config.fileConfig(path, disable_existing_loggers=False)
    return True


def _wrap(section, build):
    try:
        return build()
    except (ValueError, TypeError) as e:
        raise ConfigException(f'[{section}] {e}', {section: str(e)}) from e


def sj_config_from(config):
    orderings = get_setting(config, 'sj.orderings')
    if orderings:
        orderings = tuple(
            tuple(parse_number_list(group, int)) for group in orderings.split('|')
        )
    return _wrap(
        'sj',
        lambda: SJConfig(
            n_permutations=get_setting(config, 'sj.n_permutations', 1),
            mode=get_setting(config, 'sj.mode', 'fixed_random'),
            clamp_epsilon=get_setting(config, 'sj.clamp_epsilon', 1e-10),
            orderings=orderings or None,
        ),
    )


def fit_options_from(config, seed=None):
    """
    :param config: nested config dict (may be empty)
    :param seed: overrides ``estimation.seed``
    :return: FitOptions
    """
    return FitOptions(
        max_iter=get_setting(config, 'estimation.max_iter', 500),
        gtol=get_setting(config, 'estimation.gtol', 1e-5),
        step_tol=get_setting(config, 'estimation.step_tol', 1e-9),
        sj=sj_config_from(config),
        seed=seed if seed is not None else get_setting(config, 'estimation.seed', 0),
        n_jobs=get_setting(config, 'estimation.n_jobs', 1),
    )


def sensitivity_from(config):
    return Sensitivity(get_setting(config, 'estimation.sensitivity', 'pairwise_outer'))


def cclr3_form_from(config):
    return CCLR3Form(get_setting(config, 'selection.cclr3_form', 'pace'))


def dgp_config_from(config):
    section = get_setting(config, 'dgp')
    if section is None:
        raise ConfigException('A [dgp] section is needed', {'dgp': 'missing'})
    return _wrap('dgp', lambda: DgpConfig(**section))


def experiment_config_from(config):
    """
    Build the ExperimentConfig described by a validated experiment config.
    """
    dgp = dgp_config_from(config)
    n_replications = get_setting(config, 'experiment.n_replications', 200)
    if asbool(get_setting(config, 'experiment.full_scale', False)):
        n_replications = FULL_SCALE_REPLICATIONS
    focus = get_setting(config, 'experiment.focus', 'beta_3')
    try:
        focus_index = wide_spec(dgp).index_of(focus)
    except SpecificationException as e:
        raise ConfigException(str(e), {'experiment.focus': str(e)}) from e
    return ExperimentConfig(
        dgp=dgp,
        grid_n=get_setting(config, 'grid.n_individuals'),
        grid_values=get_setting(config, 'grid.values'),
        n_replications=n_replications,
        nominal_level=get_setting(config, 'experiment.nominal_level', 0.05),
        methods=get_setting(config, 'experiment.methods', DEFAULT_METHODS),
        n_jobs=get_setting(config, 'experiment.n_jobs', 1),
        seed=get_setting(config, 'experiment.seed', 0),
        fit_options=fit_options_from(config),
        sensitivity=sensitivity_from(config),
        cclr3_form=cclr3_form_from(config),
        mixture_draws=get_setting(config, 'selection.mixture_draws', 100_000),
        focus_index=focus_index,
    )


def _blocks(text, p_alpha):
    blocks = []
    for group in text.split('|'):
        block = [i - 1 for i in parse_number_list(group, int)]
        if any(not 0 <= i < p_alpha for i in block):
            raise SpecificationException(
                f'Block {group.strip()} refers to a coefficient outside 1..{p_alpha}'
            )
        blocks.append(block)
    return blocks


def load_model_spec(path, p_beta, p_alpha):
    """
    Read a model-spec file for data with the given numbers of fixed and random
    covariates.

    :param path: model-spec file
    :param p_beta: fixed-coefficient covariates in the data
    :param p_alpha: random-coefficient covariates in the data
    :return: tuple of (ModelSpec, init settings dict)
    """
    config = read_config(path, 'model')
    model = config['model']
    try:
        kind = model.get('omega', 'diagonal')
        blocks = _blocks(model.get('blocks', ''), p_alpha) if kind == 'blocks' else None
        name = model.get('name', Path(path).stem)
        sigma_diag = model.get('sigma_diag', 0.5)
        base = ModelSpec(
            p_beta, p_alpha, omega_pattern(p_alpha, kind, blocks), sigma_diag, name=name
        )
        gamma = tuple(base.index_of(n) for n in model.get('gamma', []))
        gamma0 = tuple(model.get('gamma0', [0.0] * len(gamma)))
        pinned = model.get('pinned', ['none'])
        if pinned in (['none'], ['all']):
            pinned = pinned[0]
        else:
            pinned = [base.index_of(n) for n in pinned]
        spec = ModelSpec(
            p_beta,
            p_alpha,
            base.omega_pattern,
            sigma_diag,
            gamma,
            gamma0,
            name=name,
        ).with_pinned(pinned)
    except SpecificationException as e:
        raise ConfigException(f'{path}: {e}', {'model': str(e)}) from e
    return spec, config.get('init', {})


def initial_theta(spec, init_settings, dgp=None):
    """
    Starting values from an ``[init]`` section: the DGP truth, a heuristic (beta = 0,
    L = scale * I) or explicit values; restricted coordinates are set to gamma0.

    :param spec: ModelSpec
    :param init_settings: dict of the ``[init]`` section
    :param dgp: DgpConfig, needed for the truth strategy
    :return: Theta
    """
    strategy = init_settings.get('strategy', 'heuristic')
    if strategy == 'truth':
        if dgp is None:
            raise ConfigException(
                'Initialising at the truth needs a [dgp] section',
                {'init.strategy': strategy},
            )
        theta = true_theta(dgp, spec)
    elif strategy == 'values':
        values = init_settings.get('values', [])
        if len(values) != spec.d:
            raise ConfigException(
                f'{len(values)} initial values for a model with {spec.d} parameters',
                {'init.values': 'wrong length'},
            )
        theta = Theta(values, spec.layout)
    else:
        theta = heuristic_init(spec, init_settings.get('scale', 1.0))
    if spec.restriction is not None:
        theta = apply_restriction(theta, *spec.restriction)
    return theta
