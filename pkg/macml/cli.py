#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

import logging
import sys

import click
import numpy as np

from .lib.averaging import (
    CandidateSet,
    Focus,
    average_estimates,
    build_problem,
    ic_weights,
)
from .lib.config import (
    cclr3_form_from,
    configure_logging,
    dgp_config_from,
    experiment_config_from,
    fit_options_from,
    initial_theta,
    load_model_spec,
    read_config,
    sensitivity_from,
)
from .lib.dgp import simulate_dataset
from .lib.errors import (
    ConfigException,
    ContextMismatchException,
    DatasetException,
    NumericalException,
    SpecificationException,
)
from .lib.estimation import fit, godambe_at
from .lib.experiment import run_experiment
from .lib.helpers import get_setting
from .lib.likelihood import CompositeLikelihood
from .lib.records import (
    build_average_record,
    build_fit_record,
    build_ic_record,
    build_test_record,
    write_record,
)
from .lib.selection import SelectionMethod, information_criteria, run_test
from .model.data import read_dataset, write_dataset

log = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)-5.5s [%(name)s] %(message)s'
USAGE_ERRORS = (
    ConfigException,
    DatasetException,
    SpecificationException,
    ContextMismatchException,
)
NUMERICAL_ERRORS = (NumericalException, np.linalg.LinAlgError)
SETTINGS_SCHEMAS = ('settings', 'dgp', 'experiment')


class MacmlGroup(click.Group):
    """
    Maps library errors to exit codes: 1 for usage and config problems, 2 for numerical
    failures.
    """

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except USAGE_ERRORS as e:
            click.secho(f'Error: {e}', fg='red', err=True)
            ctx.exit(1)
        except NUMERICAL_ERRORS as e:
            log.exception('Numerical failure')
            click.secho(f'Numerical failure: {e}', fg='red', err=True)
            ctx.exit(2)


def _settings(path):
    if path is None:
        return {}
    configure_logging(path)
    return read_config(path, *SETTINGS_SCHEMAS, required=False)


def _emit(record, out):
    text = write_record(record, out)
    if out is None:
        click.echo(text)
    else:
        click.secho(f'Wrote {out}', fg='green')


def _fit_all(data, spec_paths, config, shared=True):
    """
    Fit every model-spec file on the data.

    With ``shared`` all specs must share one parameterisation and are fitted in a single
    likelihood context, as the tests and averaging need.
    """
    specs = [load_model_spec(p, data.p_beta, data.p_alpha) for p in spec_paths]
    dgp = dgp_config_from(config) if 'dgp' in config else None
    opts = fit_options_from(config)
    shared_lik = None
    if shared:
        reference = next((s for s, _ in specs if not s.pinned), specs[0][0])
        for spec, _ in specs:
            if not spec.same_parameterisation(reference):
                raise SpecificationException(
                    f'Model {spec.name} does not share the parameterisation of '
                    f'{reference.name}'
                )
        shared_lik = CompositeLikelihood(
            data, reference, opts.sj, opts.seed, opts.n_jobs
        )

    fitted = []
    for spec, init in specs:
        likelihood = shared_lik or CompositeLikelihood(
            data, spec, opts.sj, opts.seed, opts.n_jobs
        )
        theta0 = initial_theta(spec, init, dgp)
        result = fit(data, spec, theta0, opts=opts, likelihood=likelihood)
        colour = 'green' if result.converged else 'yellow'
        click.secho(
            f'{spec.name}: lcml {result.lcml_value:.4f} after {result.n_iterations} '
            f'iterations ({result.status or "converged"})',
            fg=colour,
            err=True,
        )
        fitted.append((spec, result, likelihood))
    return fitted


@click.group(cls=MacmlGroup)
@click.option('-v', '--verbose', count=True, help='Log more (repeat for debug output)')
@click.option(
    '--log-config',
    type=click.Path(exists=True, dir_okay=False),
    help='ini file with [loggers], [handlers] and [formatters] sections',
)
def macml(verbose, log_config):
    """
    Pairwise composite likelihood estimation, tests and model averaging for mixed panel
    probit models.
    """
    if log_config is None or not configure_logging(log_config):
        level = logging.WARNING - 10 * min(verbose, 2)
        logging.basicConfig(level=level, format=LOG_FORMAT)


@macml.command(name='simulate')
@click.option(
    '--config',
    'config_path',
    required=True,
    type=click.Path(exists=True, dir_okay=False),
)
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@click.option('--seed', type=int, help='Overrides dgp.seed')
@click.option('--n-individuals', type=int, help='Overrides dgp.n_individuals')
def simulate(config_path, out, seed, n_individuals):
    """
    Simulate a panel dataset from a [dgp] config and write it as CSV.
    """
    configure_logging(config_path)
    config = read_config(config_path, 'dgp', 'settings', 'experiment', required=False)
    section = dict(get_setting(config, 'dgp', {}))
    if seed is not None:
        section['seed'] = seed
    if n_individuals is not None:
        section['n_individuals'] = n_individuals
    data = simulate_dataset(dgp_config_from({'dgp': section}))
    write_dataset(data, out)
    click.secho(
        f'Wrote {data.n_individuals} individuals x {data.n_occasions} occasions x '
        f'{data.n_alternatives} alternatives to {out}',
        fg='green',
    )


@macml.command(name='fit')
@click.option('--data', 'data_path', required=True, type=click.Path(exists=True))
@click.option('--spec', 'spec_path', required=True, type=click.Path(exists=True))
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False))
@click.option(
    '--godambe/--no-godambe', default=False, help='Add H, J and standard errors'
)
@click.option('--out', type=click.Path(dir_okay=False))
def fit_command(data_path, spec_path, config_path, godambe, out):
    """
    Fit one model-spec file and write a fit record.
    """
    config = _settings(config_path)
    data = read_dataset(data_path)
    [(spec, result, likelihood)] = _fit_all(data, [spec_path], config, shared=False)
    estimates = None
    if godambe:
        estimates, _ = godambe_at(result, likelihood, sensitivity_from(config))
    _emit(build_fit_record(result, spec, estimates), out)


@macml.command(name='test')
@click.option('--data', 'data_path', required=True, type=click.Path(exists=True))
@click.option('--unrestricted', required=True, type=click.Path(exists=True))
@click.option('--restricted', required=True, type=click.Path(exists=True))
@click.option(
    '--method',
    type=click.Choice([m.value for m in SelectionMethod]),
    default=SelectionMethod.EL.value,
    show_default=True,
)
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', type=click.Path(dir_okay=False))
def test_command(data_path, unrestricted, restricted, method, config_path, out):
    """
    Test a restricted model against the unrestricted one.
    """
    config = _settings(config_path)
    data = read_dataset(data_path)
    (_, fit_u, lik), (spec_r, fit_r, _) = _fit_all(
        data, [unrestricted, restricted], config
    )
    if not fit_r.restricted:
        raise SpecificationException(f'Model {spec_r.name} pins no coordinates')
    sensitivity = sensitivity_from(config)
    _, scores_u = godambe_at(fit_u, lik, sensitivity)
    god_r, scores_r = godambe_at(fit_r, lik, sensitivity)
    result = run_test(
        method,
        fit_u,
        fit_r,
        god_r,
        scores_u,
        scores_r,
        cclr3_form_from(config),
        get_setting(config, 'selection.mixture_draws', 100_000),
        fit_options_from(config).seed,
    )
    colour = 'yellow' if result.p_value < 0.05 else 'green'
    click.secho(
        f'{result.method.value}: statistic {result.statistic:.4f}, '
        f'p = {result.p_value:.4f}',
        fg=colour,
        err=True,
    )
    _emit(build_test_record(result), out)


@macml.command(name='ic')
@click.option('--data', 'data_path', required=True, type=click.Path(exists=True))
@click.option(
    '--spec', 'spec_paths', required=True, multiple=True, type=click.Path(exists=True)
)
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', type=click.Path(dir_okay=False))
def ic_command(data_path, spec_paths, config_path, out):
    """
    CLAIC and CLBIC of one or more models, nested or not.
    """
    config = _settings(config_path)
    data = read_dataset(data_path)
    sensitivity = sensitivity_from(config)
    named = []
    for spec, result, likelihood in _fit_all(data, spec_paths, config, shared=False):
        estimates, _ = godambe_at(result, likelihood, sensitivity)
        named.append((spec.name, information_criteria(result, estimates)))
    _emit(build_ic_record(named), out)


@macml.command(name='average')
@click.option('--data', 'data_path', required=True, type=click.Path(exists=True))
@click.option(
    '--spec', 'spec_paths', required=True, multiple=True, type=click.Path(exists=True)
)
@click.option(
    '--focus',
    required=True,
    help='e.g. coordinate:beta_3, linear:beta_1=1,beta_2=-1, set:L_21,L_31, pair:1,1,2',
)
@click.option(
    '--rule', type=click.Choice(['mse', 'claic']), default='mse', show_default=True
)
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', type=click.Path(dir_okay=False))
def average_command(data_path, spec_paths, focus, rule, config_path, out):
    """
    Average nested candidate models with MSE-optimal or smoothed-CLAIC weights.
    """
    config = _settings(config_path)
    data = read_dataset(data_path)
    fitted = _fit_all(data, spec_paths, config)
    candidates = CandidateSet([s for s, _, _ in fitted], [f for _, f, _ in fitted])
    likelihood = fitted[candidates.wide_index][2]
    focus_obj = Focus.parse(focus, candidates.specs[candidates.wide_index])
    sensitivity = sensitivity_from(config)

    problem = None
    if rule == 'mse':
        wide_estimates, _ = godambe_at(candidates.wide, likelihood, sensitivity)
        problem = build_problem(candidates, focus_obj, wide_estimates, likelihood)
        weights = problem.weights
    else:
        ics = []
        for _, result, _ in fitted:
            estimates, _ = godambe_at(result, likelihood, sensitivity)
            ics.append(information_criteria(result, estimates).claic)
        weights = ic_weights(ics)
    averaged = average_estimates(candidates, weights, focus_obj, likelihood)
    _emit(build_average_record(candidates, averaged, focus, rule, problem), out)


@macml.command(name='experiment')
@click.option(
    '--config',
    'config_path',
    required=True,
    type=click.Path(exists=True, dir_okay=False),
)
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@click.option(
    '--replications-out',
    type=click.Path(dir_okay=False),
    help='Also write every replication\'s statistics as a long CSV',
)
@click.option('--n-jobs', type=int, help='Overrides experiment.n_jobs')
def experiment_command(config_path, out, replications_out, n_jobs):
    """
    Run a Monte Carlo experiment and write the results table as CSV.
    """
    configure_logging(config_path)
    config = read_config(config_path, 'experiment', 'dgp', 'settings')
    if n_jobs is not None:
        config.setdefault('experiment', {})['n_jobs'] = n_jobs
    cfg = experiment_config_from(config)
    result = run_experiment(cfg)
    result.summary.to_csv(out, index=False)
    click.secho(f'Wrote {len(result.summary)} result rows to {out}', fg='green')
    if replications_out:
        result.replications.to_csv(replications_out, index=False)
        click.secho(f'Wrote replication statistics to {replications_out}', fg='green')
    dropped = result.summary[
        (result.summary['method'] == 'replications')
        & (result.summary['metric'] != 'n_replications')
    ]['value'].sum()
    if dropped:
        click.secho(f'{int(dropped)} replications were dropped', fg='yellow')


def cli(argv=None):
    """
    Run the command line with the given arguments.

    :param argv: argument list (default sys.argv[1:])
    :return: exit code; 0 on success, 1 on usage or config errors, 2 on numerical
        failures
    """
    try:
        code = macml.main(args=argv, prog_name='macml', standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        click.secho('Aborted', fg='red', err=True)
        return 1
    return code if isinstance(code, int) else 0


def main():
    sys.exit(cli())
