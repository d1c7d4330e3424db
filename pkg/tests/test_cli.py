#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

from unittest.mock import patch

import pandas as pd
import pytest
from click.testing import CliRunner

from macml.cli import cli, macml
from macml.lib.dgp import DgpConfig, simulate_dataset
from macml.lib.errors import NumericalException
from macml.lib.experiment import RESULT_COLUMNS, ExperimentResult
from macml.lib.records import read_record
from macml.model.data import write_dataset

from .helpers.constants import (
    BAD_EXPERIMENT_CONFIG,
    EXPERIMENT_CONFIG,
    MODEL_SPEC,
    NARROW_MODEL_SPEC,
)

DGP_CONFIG = '''
[dgp]
family = generic
n_individuals = 5
n_occasions = 2
n_alternatives = 3
n_covariates = 2
seed = 3
'''


@pytest.fixture(scope='module')
def files(tmp_path_factory):
    """
    A small generic panel on disk with a wide and a narrow model-spec file.
    """
    root = tmp_path_factory.mktemp('cli')
    cfg = DgpConfig(
        family='generic',
        n_individuals=40,
        n_occasions=3,
        n_alternatives=3,
        n_covariates=2,
        beta=0.8,
        seed=19,
    )
    paths = {
        'data': root / 'panel.csv',
        'wide': root / 'wide.spec',
        'narrow': root / 'narrow.spec',
        'settings': root / 'settings.cfg',
    }
    write_dataset(simulate_dataset(cfg), paths['data'])
    paths['wide'].write_text(MODEL_SPEC)
    paths['narrow'].write_text(NARROW_MODEL_SPEC)
    paths['settings'].write_text(
        '[estimation]\nseed = 2\n\n[selection]\nmixture_draws = 2000\n'
    )
    return {name: str(path) for name, path in paths.items()}


def test_help():
    result = CliRunner().invoke(macml, ['--help'])
    assert result.exit_code == 0
    for command in ('simulate', 'fit', 'test', 'ic', 'average', 'experiment'):
        assert command in result.output


class TestSimulate:
    def test_writes_a_panel(self, tmp_path):
        config = tmp_path / 'dgp.cfg'
        config.write_text(DGP_CONFIG)
        out = tmp_path / 'panel.csv'
        result = CliRunner().invoke(
            macml,
            ['simulate', '--config', str(config), '--out', str(out), '--seed', '4'],
        )
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(out)
        assert len(frame) == 5 * 2 * 3
        assert frame.groupby(['individual', 'occasion'])['chosen'].sum().eq(1).all()

    def test_overrides_size(self, tmp_path):
        config = tmp_path / 'dgp.cfg'
        config.write_text(DGP_CONFIG)
        out = tmp_path / 'panel.csv'
        code = cli(
            [
                'simulate',
                '--config',
                str(config),
                '--out',
                str(out),
                '--n-individuals',
                '2',
            ]
        )
        assert code == 0
        assert len(pd.read_csv(out)) == 2 * 2 * 3

    def test_bad_config(self, tmp_path):
        config = tmp_path / 'bad.cfg'
        config.write_text('[dgp]\nfamily = logit\n')
        args = ['simulate', '--config', str(config), '--out', str(tmp_path / 'x.csv')]
        assert CliRunner().invoke(macml, args).exit_code == 1
        assert cli(args) == 1


class TestFitCommands:
    def test_fit(self, files, tmp_path):
        out = tmp_path / 'fit.xml'
        code = cli(
            ['fit', '--data', files['data'], '--spec', files['wide'], '--out', str(out)]
        )
        assert code == 0
        record = read_record(out)['fit']
        assert record['@model'] == 'wide'
        assert [v['@name'] for v in record['theta']['value']] == [
            'beta_1', 'beta_2', 'L_11', 'L_22'
        ]

    def test_fit_to_stdout_with_godambe(self, files):
        result = CliRunner().invoke(
            macml,
            ['fit', '--data', files['data'], '--spec', files['narrow'], '--godambe'],
        )
        assert result.exit_code == 0, result.output
        assert '<standard_errors' in result.output
        assert '<restriction' in result.output

    @pytest.mark.parametrize('method', ['el', 'cclr1', 'cclr3'])
    def test_test(self, files, tmp_path, method):
        out = tmp_path / 'test.xml'
        code = cli(
            [
                'test',
                '--data', files['data'],
                '--unrestricted', files['wide'],
                '--restricted', files['narrow'],
                '--method', method,
                '--config', files['settings'],
                '--out', str(out),
            ]
        )
        assert code == 0
        record = read_record(out)['test']
        assert record['@method'] == method
        assert 0 <= float(record['p_value']) <= 1

    def test_restricted_model_must_pin(self, files):
        args = [
            'test',
            '--data', files['data'],
            '--unrestricted', files['wide'],
            '--restricted', files['wide'],
        ]
        assert cli(args) == 1

    def test_ic(self, files, tmp_path):
        out = tmp_path / 'ic.xml'
        code = cli(
            [
                'ic',
                '--data', files['data'],
                '--spec', files['wide'],
                '--spec', files['narrow'],
                '--out', str(out),
            ]
        )
        assert code == 0
        models = read_record(out)['information_criteria']['model']
        assert [m['@name'] for m in models] == ['wide', 'narrow']

    @pytest.mark.parametrize('rule', ['mse', 'claic'])
    def test_average(self, files, tmp_path, rule):
        out = tmp_path / 'average.xml'
        code = cli(
            [
                'average',
                '--data', files['data'],
                '--spec', files['wide'],
                '--spec', files['narrow'],
                '--focus', 'coordinate:beta_1',
                '--rule', rule,
                '--out', str(out),
            ]
        )
        assert code == 0
        record = read_record(out)['average']
        weights = [float(v['#text']) for v in record['weights']['value']]
        assert sum(weights) == pytest.approx(1.0)
        assert ('F' in record) == (rule == 'mse')

    def test_bad_focus(self, files):
        args = [
            'average',
            '--data', files['data'],
            '--spec', files['wide'],
            '--spec', files['narrow'],
            '--focus', 'coordinate:beta_9',
        ]
        assert cli(args) == 1

    def test_numerical_failure(self, files):
        args = ['fit', '--data', files['data'], '--spec', files['wide']]
        with patch('macml.cli.fit', side_effect=NumericalException('diverged')):
            assert cli(args) == 2

    def test_missing_data(self, files, tmp_path):
        args = ['fit', '--data', str(tmp_path / 'none.csv'), '--spec', files['wide']]
        assert cli(args) == 1


class TestExperimentCommand:
    def _result(self, dropped=0.0):
        summary = pd.DataFrame(
            [
                ['n40_beta0', 'replications', 'n_replications', 3.0, 3],
                ['n40_beta0', 'replications', 'n_not_converged', dropped, 3],
                ['n40_beta0', 'clr', 'rejection_rate', 0.5, 3],
            ],
            columns=RESULT_COLUMNS,
        )
        return ExperimentResult(summary, pd.DataFrame({'cell_id': ['n40_beta0']}))

    def test_writes_tables(self, tmp_path):
        config = tmp_path / 'experiment.cfg'
        config.write_text(EXPERIMENT_CONFIG)
        out, reps = tmp_path / 'results.csv', tmp_path / 'reps.csv'
        with patch('macml.cli.run_experiment', return_value=self._result(1.0)) as run:
            result = CliRunner().invoke(
                macml,
                [
                    'experiment',
                    '--config', str(config),
                    '--out', str(out),
                    '--replications-out', str(reps),
                    '--n-jobs', '2',
                ],
            )
        assert result.exit_code == 0, result.output
        assert run.call_args[0][0].n_jobs == 2
        assert list(pd.read_csv(out).columns) == RESULT_COLUMNS
        assert reps.exists()
        assert '1 replications were dropped' in result.output

    def test_invalid_config(self, tmp_path):
        config = tmp_path / 'experiment.cfg'
        config.write_text(BAD_EXPERIMENT_CONFIG)
        args = ['experiment', '--config', str(config), '--out', str(tmp_path / 'r.csv')]
        assert cli(args) == 1
