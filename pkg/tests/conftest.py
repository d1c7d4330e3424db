#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

from types import SimpleNamespace

import numpy as np
import pytest

from macml.lib.dgp import (
    DgpConfig,
    narrow_spec,
    simulate_dataset,
    true_theta,
    wide_spec,
)
from macml.lib.estimation import Fit, FitOptions, fit, godambe_at
from macml.lib.gauss import SJConfig
from macml.lib.likelihood import CompositeLikelihood
from macml.model.spec import Theta


def pytest_addoption(parser):
    parser.addoption(
        '--runslow',
        action='store_true',
        default=False,
        help='run the Monte Carlo replications and other slow tests',
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='slow; use --runslow to run')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session')
def small_dgp():
    """
    A small generic panel: 3 alternatives, 2 random covariates, 3 occasions.
    """
    return DgpConfig(
        family='generic',
        n_individuals=30,
        n_occasions=3,
        n_alternatives=3,
        n_covariates=2,
        beta=0.5,
        seed=7,
    )


@pytest.fixture(scope='session')
def small_data(small_dgp):
    return simulate_dataset(small_dgp)


@pytest.fixture(scope='session')
def small_spec(small_dgp):
    return wide_spec(small_dgp)


@pytest.fixture
def all_orderings():
    return SJConfig(mode='all')


@pytest.fixture(scope='session')
def varsel_dgp():
    return DgpConfig(
        family='varsel', n_individuals=120, n_alternatives=3, beta=0.5, seed=11
    )


@pytest.fixture(scope='session')
def varsel_fits(varsel_dgp):
    """
    Unrestricted and restricted fits of the variable-selection models on one simulated
    panel, with their scores and Godambe estimates.
    """
    data = simulate_dataset(varsel_dgp)
    wide, narrow = wide_spec(varsel_dgp), narrow_spec(varsel_dgp)
    opts = FitOptions(seed=3)
    likelihood = CompositeLikelihood(data, wide, opts.sj, opts.seed)
    fit_u = fit(
        data, wide, true_theta(varsel_dgp, wide), opts=opts, likelihood=likelihood
    )
    fit_r = fit(
        data, narrow, true_theta(varsel_dgp, narrow), opts=opts, likelihood=likelihood
    )
    god_u, scores_u = godambe_at(fit_u, likelihood)
    god_r, scores_r = godambe_at(fit_r, likelihood)
    return SimpleNamespace(
        data=data,
        wide=wide,
        narrow=narrow,
        likelihood=likelihood,
        fit_u=fit_u,
        fit_r=fit_r,
        god_u=god_u,
        god_r=god_r,
        scores_u=scores_u,
        scores_r=scores_r,
    )


@pytest.fixture
def make_fit():
    """
    Factory for Fit results with chosen values, for tests that do not need a real
    optimisation.
    """

    def _make(
        values, lcml_value=-100.0, restriction=None, context=None, n=100, name='m'
    ):
        values = np.asarray(values, dtype=float)
        names = tuple(f'theta_{i + 1}' for i in range(values.size))
        return Fit(
            Theta(values, names),
            lcml_value,
            restriction,
            10,
            True,
            0.0,
            1e-5,
            context or {'data': 'abc', 'seed': 0},
            n,
            name,
        )

    return _make
