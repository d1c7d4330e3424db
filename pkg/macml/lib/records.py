#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

"""
Result records of the command line tools, built as nested dicts and written as XML with
xmltodict.
"""

import logging
from pathlib import Path

import numpy as np
import xmltodict

from .errors import SingularMatrixException

log = logging.getLogger(__name__)


def _number(value):
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), '.17g')


def build_vector(values, names=None):
    """
    A vector as repeated ``value`` elements, named when names are given.
    """
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if names is None:
        return {'@size': str(values.size), 'value': [_number(v) for v in values]}
    return {
        '@size': str(values.size),
        'value': [{'@name': n, '#text': _number(v)} for n, v in zip(names, values)],
    }


def build_matrix(matrix):
    """
    A matrix written row-major, one space-separated ``row`` element per row.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    rows, cols = matrix.shape
    return {
        '@rows': str(rows),
        '@cols': str(cols),
        'row': [' '.join(_number(v) for v in row) for row in matrix],
    }


def _scalars(mapping):
    out = {}
    for key, value in mapping.items():
        if value is None:
            continue
        if isinstance(value, dict):
            out[key] = _scalars(value)
        elif isinstance(value, (list, tuple, np.ndarray)):
            out[key] = build_vector(value)
        elif isinstance(value, str):
            out[key] = value
        else:
            out[key] = _number(value)
    return out


def build_fit_record(fit_result, spec, godambe_estimates=None):
    """
    :param fit_result: Fit
    :param spec: ModelSpec the fit was made with
    :param godambe_estimates: optional GodambeEstimates to add H, J and standard errors
    :return: dict for :func:`write_record`
    """
    names = fit_result.theta_hat.names
    record = {
        '@model': fit_result.model_name,
        'converged': _number(fit_result.converged),
        'status': fit_result.status or 'ok',
        'lcml': _number(fit_result.lcml_value),
        'n_individuals': _number(fit_result.n_individuals),
        'n_iterations': _number(fit_result.n_iterations),
        'gradient_norm': _number(fit_result.gradient_norm),
        'tolerance': _number(fit_result.tolerance),
        'elapsed_seconds': _number(fit_result.elapsed_seconds),
        'context': _scalars(fit_result.context),
        'theta': build_vector(fit_result.theta_hat.values, names),
    }
    if fit_result.restricted:
        indices, values = fit_result.restriction
        record['restriction'] = build_vector(values, [names[i] for i in indices])
    if spec.gamma_indices:
        record['gamma'] = ' '.join(names[i] for i in spec.gamma_indices)
    if godambe_estimates is not None:
        free = list(fit_result.free_indices)
        record['sensitivity'] = {
            '@estimator': godambe_estimates.which_H.value,
            **build_matrix(godambe_estimates.H),
        }
        record['variability'] = build_matrix(godambe_estimates.J)
        try:
            reduced = godambe_estimates.restrict_to(free)
            se = reduced.standard_errors(fit_result.n_individuals)
            record['standard_errors'] = build_vector(se, [names[i] for i in free])
        except (np.linalg.LinAlgError, SingularMatrixException):
            log.warning('Godambe information is singular; no standard errors written')
    return {'fit': record}


def build_test_record(result):
    """
    :param result: TestResult; adjustment eigenvalues in its diagnostics get their own
        element
    :return: dict for :func:`write_record`
    """
    record = {
        '@method': result.method.value,
        'statistic': _number(result.statistic),
        'dof': _number(result.dof),
        'p_value': _number(result.p_value),
    }
    diagnostics = dict(result.diagnostics)
    lambdas = diagnostics.pop('lambdas', None)
    if lambdas is not None:
        record['lambdas'] = build_vector(lambdas)
    if diagnostics:
        record['diagnostics'] = _scalars(diagnostics)
    return {'test': record}


def build_ic_record(named_results):
    """
    :param named_results: list of (model name, ICResult)
    :return: dict for :func:`write_record`
    """
    models = []
    for name, result in named_results:
        models.append(
            {
                '@name': name,
                'claic': _number(result.claic),
                'clbic': _number(result.clbic),
                'penalty_trace': _number(result.penalty_trace),
                'lcml': _number(result.lcml_value),
                'n': _number(result.n),
            }
        )
    return {'information_criteria': {'model': models}}


def build_average_record(candidates, averaged, focus_text, rule, problem=None):
    """
    :param candidates: CandidateSet
    :param averaged: AveragedEstimate
    :param focus_text: the focus declaration
    :param rule: 'mse' or 'claic'
    :param problem: AveragingProblem for MSE-optimal weights
    :return: dict for :func:`write_record`
    """
    record = {
        '@rule': rule,
        'focus': focus_text,
        'weights': build_vector(averaged.weights, candidates.names),
        'theta': build_vector(averaged.theta.values, averaged.theta.names),
    }
    if averaged.focus_value is not None:
        if np.ndim(averaged.focus_value) == 0:
            record['focus_value'] = _number(averaged.focus_value)
        else:
            record['focus_value'] = build_vector(averaged.focus_value)
    if problem is not None:
        record['rank_F'] = _number(problem.rank_F)
        record['min_eigenvalue_F'] = _number(problem.min_eigenvalue_F)
        record['F'] = build_matrix(problem.F)
        record['delta_hat'] = build_vector(problem.delta_hat)
        if problem.flagged:
            record['flagged'] = ' '.join(candidates.names[m] for m in problem.flagged)
    return {'average': record}


def write_record(record, path=None):
    """
    Serialise a record dict to XML, writing it to path when one is given.

    :return: the XML text
    """
    text = xmltodict.unparse(record, pretty=True)
    if path is not None:
        Path(path).write_text(text)
        log.debug(f'Wrote {next(iter(record))} record to {path}')
    return text


def read_record(path_or_text):
    """
    Parse a record written by :func:`write_record` back into a dict (values stay
    strings).
    """
    text = str(path_or_text)
    if not text.lstrip().startswith('<'):
        text = Path(text).read_text()
    return xmltodict.parse(text)
