#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

"""
Monte Carlo experiments comparing tests, information criteria and averaging rules on
simulated panels.
"""

import dataclasses
import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .averaging import CandidateSet, Focus, average_estimates, build_problem, ic_weights
from .dgp import (
    DgpConfig,
    DgpFamily,
    narrow_spec,
    simulate_dataset,
    true_theta,
    wide_spec,
)
from .errors import ConfigException, MacmlException
from .estimation import FitOptions, Sensitivity, fit, godambe_at
from .helpers import derive_seed
from .likelihood import CompositeLikelihood
from .selection import CCLR3Form, information_criteria, run_test

log = logging.getLogger(__name__)

RESULT_COLUMNS = ['cell_id', 'method', 'metric', 'value', 'n_effective_reps']
REPLICATION_COLUMNS = ['cell_id', 'replication', 'seed', 'method', 'quantity', 'value']
FULL_SCALE_REPLICATIONS = 500


class Method(enum.Enum):
    CLR = 'clr'
    CLR_MIXTURE = 'clr_mixture'
    CCLR1 = 'cclr1'
    CCLR2 = 'cclr2'
    CCLR3 = 'cclr3'
    EL = 'el'
    CLAIC = 'claic'
    CLBIC = 'clbic'
    IC_AVG = 'ic_avg'
    MSE_AVG = 'mse_avg'


TEST_METHODS = (
    Method.CLR,
    Method.CLR_MIXTURE,
    Method.CCLR1,
    Method.CCLR2,
    Method.CCLR3,
    Method.EL,
)
IC_METHODS = (Method.CLAIC, Method.CLBIC)
DEFAULT_METHODS = tuple(m for m in Method if m is not Method.CLR_MIXTURE)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A grid of data-generating processes and the replication design run on each cell.

    :param dgp: template DgpConfig; its n_individuals and beta/alpha are overridden by
        the grid
    :param grid_n: sample sizes
    :param grid_values: values of beta (VARSEL) or alpha (COVSTRUCT)
    :param n_replications: replications per cell
    :param nominal_level: test level
    :param methods: Methods to evaluate
    :param n_jobs: joblib workers over replications
    :param seed: master seed of the replication seeds
    :param fit_options: FitOptions of every fit (its seed is replaced per replication)
    :param sensitivity: sensitivity estimator
    :param cclr3_form: CCLR3Form
    :param mixture_draws: Monte Carlo draws of the weighted chi-square p-value
    :param focus_index: coordinate whose absolute error is reported
    """

    dgp: DgpConfig = field(default_factory=DgpConfig)
    grid_n: tuple = (300,)
    grid_values: tuple = (0.0,)
    n_replications: int = 200
    nominal_level: float = 0.05
    methods: tuple = DEFAULT_METHODS
    n_jobs: int = 1
    seed: int = 0
    fit_options: FitOptions = field(default_factory=FitOptions)
    sensitivity: Sensitivity = Sensitivity.PAIRWISE_OUTER
    cclr3_form: CCLR3Form = CCLR3Form.PACE
    mixture_draws: int = 100_000
    focus_index: int = 2

    def __post_init__(self):
        object.__setattr__(self, 'methods', tuple(Method(m) for m in self.methods))
        object.__setattr__(self, 'grid_n', tuple(int(n) for n in self.grid_n))
        object.__setattr__(
            self, 'grid_values', tuple(float(v) for v in self.grid_values)
        )
        errors = {}
        if self.n_replications < 1:
            errors['n_replications'] = 'need at least one replication'
        if not 0 < self.nominal_level < 1:
            errors['nominal_level'] = 'the level must lie in (0, 1)'
        if not self.methods:
            errors['methods'] = 'no methods selected'
        if not self.grid_n or not self.grid_values:
            errors['grid'] = 'the grid is empty'
        if self.dgp.family is DgpFamily.GENERIC:
            errors['family'] = 'experiments need a family with a tested block'
        if errors:
            raise ConfigException(f'Invalid experiment: {errors}', errors)

    @property
    def grid_parameter(self):
        return 'alpha' if self.dgp.family is DgpFamily.COVSTRUCT else 'beta'

    def cells(self):
        """
        The grid cells in a fixed order.

        :return: list of (cell_id, DgpConfig)
        """
        cells = []
        for n in self.grid_n:
            for value in self.grid_values:
                dgp = dataclasses.replace(
                    self.dgp, n_individuals=n, **{self.grid_parameter: value}
                )
                cells.append((f'n{n}_{self.grid_parameter}{value:g}', dgp))
        return cells


@dataclass(frozen=True)
class ReplicationOutcome:
    """
    ``status`` is 'ok', 'not_converged' or 'failed'. ``quantities`` maps a method value
    to the numbers it produced; methods that failed on their own are absent.
    """

    cell_id: str
    replication: int
    seed: int
    status: str
    quantities: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    summary: pd.DataFrame
    replications: pd.DataFrame


def _evaluate(method, cfg, ctx):
    focus, truth = ctx['focus'], ctx['truth']
    if method in TEST_METHODS:
        result = run_test(
            method.value,
            ctx['fit_u'],
            ctx['fit_r'],
            ctx['god_r'],
            ctx['scores_u'],
            ctx['scores_r'],
            cfg.cclr3_form,
            cfg.mixture_draws,
            ctx['seed'],
        )
        return {
            'statistic': result.statistic,
            'p_value': result.p_value,
            'reject': float(result.p_value < cfg.nominal_level),
        }
    if method in IC_METHODS:
        key = method.value
        ic_u = getattr(ctx['ic_u'], key)
        ic_r = getattr(ctx['ic_r'], key)
        larger = ic_u < ic_r
        chosen = ctx['fit_u'] if larger else ctx['fit_r']
        return {
            'ic_unrestricted': ic_u,
            'ic_restricted': ic_r,
            'larger': float(larger),
            'abs_error': abs(focus.value(chosen.theta_hat) - truth),
        }
    candidates = ctx['candidates']
    if method is Method.IC_AVG:
        weights = ic_weights([ctx['ic_u'].claic, ctx['ic_r'].claic])
    else:
        weights = build_problem(candidates, focus, ctx['god_u']).weights
    averaged = average_estimates(candidates, weights, focus)
    return {
        'weight_unrestricted': float(weights[0]),
        'abs_error': abs(averaged.focus_value - truth),
    }


def run_replication(cfg, cell_index, cell_id, dgp, replication):
    """
    Simulate one dataset, fit the unrestricted and restricted models in a shared SJ
    context and evaluate every configured method on them.

    :param cfg: ExperimentConfig
    :param cell_index: position of the cell in the grid
    :param cell_id: label of the cell
    :param dgp: DgpConfig of the cell
    :param replication: replication index
    :return: ReplicationOutcome
    """
    seed = derive_seed(cfg.seed, cell_index, replication)
    try:
        data = simulate_dataset(dataclasses.replace(dgp, seed=seed))
        wide, narrow = wide_spec(dgp), narrow_spec(dgp)
        opts = dataclasses.replace(cfg.fit_options, seed=seed)
        likelihood = CompositeLikelihood(data, wide, opts.sj, seed, opts.n_jobs)
        fit_u = fit(data, wide, true_theta(dgp, wide), opts=opts, likelihood=likelihood)
        fit_r = fit(
            data, narrow, true_theta(dgp, narrow), opts=opts, likelihood=likelihood
        )
        if not (fit_u.converged and fit_r.converged):
            log.info(
                f'{cell_id} replication {replication}: dropped, fits did not converge '
                f'({fit_u.status or "ok"} / {fit_r.status or "ok"})'
            )
            return ReplicationOutcome(cell_id, replication, seed, 'not_converged')
        god_u, scores_u = godambe_at(fit_u, likelihood, cfg.sensitivity)
        god_r, scores_r = godambe_at(fit_r, likelihood, cfg.sensitivity)
        ctx = {
            'seed': seed,
            'fit_u': fit_u,
            'fit_r': fit_r,
            'god_u': god_u,
            'god_r': god_r,
            'scores_u': scores_u,
            'scores_r': scores_r,
            'ic_u': information_criteria(fit_u, god_u),
            'ic_r': information_criteria(fit_r, god_r),
            'candidates': CandidateSet((wide, narrow), (fit_u, fit_r)),
            'focus': Focus.coordinate(cfg.focus_index),
            'truth': float(true_theta(dgp, wide).values[cfg.focus_index]),
        }
    except (MacmlException, np.linalg.LinAlgError, ValueError):
        log.exception(f'{cell_id} replication {replication} failed')
        return ReplicationOutcome(cell_id, replication, seed, 'failed')

    quantities = {}
    for method in cfg.methods:
        try:
            quantities[method.value] = _evaluate(method, cfg, ctx)
        except (MacmlException, np.linalg.LinAlgError, ValueError):
            log.exception(f'{cell_id} replication {replication}: {method.value} failed')
    log.debug(f'{cell_id} replication {replication} done (seed {seed})')
    return ReplicationOutcome(cell_id, replication, seed, 'ok', quantities)


def _metric_of(method):
    if method in TEST_METHODS:
        return [('rejection_rate', 'reject')]
    if method in IC_METHODS:
        return [('larger_model_rate', 'larger'), ('mae', 'abs_error')]
    return [('mae', 'abs_error')]


def summarise(cfg, outcomes):
    """
    Aggregate replication outcomes into the results table, in grid and method order.

    :param cfg: ExperimentConfig
    :param outcomes: iterable of ReplicationOutcome, in any order
    :return: DataFrame with RESULT_COLUMNS
    """
    by_cell = {}
    for outcome in sorted(outcomes, key=lambda o: (o.cell_id, o.replication)):
        by_cell.setdefault(outcome.cell_id, []).append(outcome)

    rows = []
    for cell_id, _ in cfg.cells():
        cell = by_cell.get(cell_id, [])
        usable = [o for o in cell if o.status == 'ok']
        counts = {
            'n_replications': len(cell),
            'n_not_converged': sum(o.status == 'not_converged' for o in cell),
            'n_failed': sum(o.status == 'failed' for o in cell),
        }
        for metric, count in counts.items():
            rows.append([cell_id, 'replications', metric, float(count), len(usable)])
        for method in cfg.methods:
            records = [
                o.quantities[method.value]
                for o in usable
                if method.value in o.quantities
            ]
            for metric, quantity in _metric_of(method):
                value = (
                    float(np.mean([r[quantity] for r in records]))
                    if records
                    else np.nan
                )
                rows.append([cell_id, method.value, metric, value, len(records)])
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def replication_table(outcomes):
    """
    Long table of every number every replication produced, for downstream plots such
    as p-value ECDFs.
    """
    rows = []
    for o in sorted(outcomes, key=lambda o: (o.cell_id, o.replication)):
        usable = float(o.status == 'ok')
        rows.append([o.cell_id, o.replication, o.seed, 'replication', 'usable', usable])
        for method, quantities in o.quantities.items():
            for quantity, value in quantities.items():
                rows.append([o.cell_id, o.replication, o.seed, method, quantity, value])
    return pd.DataFrame(rows, columns=REPLICATION_COLUMNS)


def run_experiment(cfg):
    """
    Run every replication of every grid cell and aggregate.

    Replication seeds depend only on (master seed, cell, replication), so the tables
    are the same for any number of workers.

    :param cfg: ExperimentConfig
    :return: ExperimentResult
    """
    tasks = [
        (cell_index, cell_id, dgp, replication)
        for cell_index, (cell_id, dgp) in enumerate(cfg.cells())
        for replication in range(cfg.n_replications)
    ]
    log.info(
        f'Running {len(tasks)} replications over {len(cfg.cells())} cells '
        f'with n_jobs={cfg.n_jobs}'
    )
    outcomes = Parallel(n_jobs=cfg.n_jobs)(
        delayed(run_replication)(cfg, *task) for task in tasks
    )
    return ExperimentResult(summarise(cfg, outcomes), replication_table(outcomes))
