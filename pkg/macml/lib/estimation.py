#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

import enum
import logging
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..model.spec import Theta, apply_restriction
from .errors import LineSearchException, SingularMatrixException, SpecificationException
from .gauss import SJConfig
from .likelihood import CompositeLikelihood

log = logging.getLogger(__name__)

HESSIAN_STEP = np.finfo(float).eps ** 0.25


class Sensitivity(enum.Enum):
    HESSIAN = 'hessian'
    PAIRWISE_OUTER = 'pairwise_outer'


@dataclass(frozen=True)
class FitOptions:
    """
    Optimizer and evaluation-context settings for :func:`fit`.
    """

    max_iter: int = 500
    gtol: float = 1e-5
    step_tol: float = 1e-9
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-14
    sj: SJConfig = field(default_factory=SJConfig)
    seed: int = 0
    n_jobs: int = 1


@dataclass(frozen=True, eq=False)
class Fit:
    """
    The result of maximising the composite log-likelihood.
    """

    theta_hat: Theta
    lcml_value: float
    restriction: tuple
    n_iterations: int
    converged: bool
    gradient_norm: float
    tolerance: float
    context: dict
    n_individuals: int
    model_name: str = 'model'
    status: str = ''
    elapsed_seconds: float = 0.0

    @property
    def restricted(self):
        return self.restriction is not None

    @property
    def free_indices(self):
        pinned = set(self.restriction[0]) if self.restricted else set()
        return tuple(i for i in range(len(self.theta_hat)) if i not in pinned)


def _backtracking(objective, x, f, g, p, opts):
    """
    Backtracking line search for a step with sufficient decrease (Armijo).

    :return: tuple of (step length, new x, new objective value)
    """
    slope = g @ p
    alpha = 1.0
    while alpha >= opts.min_step:
        x_new = x + alpha * p
        f_new = objective(x_new)
        if np.isfinite(f_new) and f_new <= f + opts.armijo * alpha * slope:
            return alpha, x_new, f_new
        alpha *= opts.backtrack
    raise LineSearchException('No sufficient decrease along the search direction')


def fit(data, spec, init, restriction=None, opts=None, likelihood=None):
    """
    Maximise the pairwise composite log-likelihood with BFGS, keeping restricted
    coordinates pinned.

    Stops when the sup-norm of the free-coordinate gradient of lcml is at most
    ``gtol * max(1, |lcml| / N)`` or a step shorter than ``step_tol`` is taken.

    :param data: PanelDataset
    :param spec: ModelSpec
    :param init: starting Theta
    :param restriction: optional (indices, values) to pin; defaults to the spec's own
        pinned coordinates
    :param opts: FitOptions
    :param likelihood: optional CompositeLikelihood to evaluate in (its data, SJ config
        and seed are then used instead of the ones in opts)
    :return: Fit
    """
    opts = opts or FitOptions()
    started = time.perf_counter()
    lik = likelihood or CompositeLikelihood(
        data, spec, opts.sj, opts.seed, opts.n_jobs
    )
    if restriction is None:
        restriction = spec.restriction
    if restriction is not None:
        indices, values = (tuple(int(i) for i in restriction[0]), tuple(restriction[1]))
        if len(indices) != len(values):
            raise SpecificationException('Restriction needs one value per index')
        restriction = (indices, values) if indices else None
    if len(init) != spec.d:
        raise SpecificationException(f'Init has {len(init)} values, model has {spec.d}')

    n = data.n_individuals
    theta = init if restriction is None else apply_restriction(init, *restriction)
    base = theta.values.copy()
    free = np.array(
        [i for i in range(spec.d) if restriction is None or i not in restriction[0]],
        dtype=np.intp,
    )

    def _full(x):
        full = base.copy()
        full[free] = x
        return full

    def objective(x):
        return -lik.lcml(_full(x)) / n

    def gradient(x):
        return -lik.score(_full(x), indices=free).total[free] / n

    def _result(x, f, iterations, converged, gnorm, tol, status):
        elapsed = time.perf_counter() - started
        log.info(
            f'{spec.name}: {status} after {iterations} iterations, lcml={-f * n:.6f}, '
            f'|g|={gnorm:.3g} ({elapsed:.1f}s)'
        )
        return Fit(
            theta.with_values(_full(x)),
            float(-f * n),
            restriction,
            iterations,
            converged,
            float(gnorm),
            float(tol),
            lik.context,
            n,
            spec.name,
            status,
            elapsed,
        )

    x = base[free]
    f = objective(x)
    if free.size == 0:
        return _result(x, f, 0, True, 0.0, 0.0, 'all coordinates restricted')

    g = gradient(x)
    inv_hess = np.eye(free.size)
    fresh = True
    for iteration in range(opts.max_iter):
        tol = opts.gtol * max(1.0, abs(f))
        gnorm = np.max(np.abs(g)) * n
        if gnorm <= tol:
            return _result(x, f, iteration, True, gnorm, tol, 'converged')

        p = -inv_hess @ g
        if g @ p >= 0:
            inv_hess = np.eye(free.size)
            fresh = True
            p = -g
        if fresh:
            p = p / max(1.0, np.max(np.abs(p)))
        try:
            alpha, x_new, f_new = _backtracking(objective, x, f, g, p, opts)
        except LineSearchException:
            if fresh:
                return _result(x, f, iteration, False, gnorm, tol, 'line search failed')
            log.debug(f'{spec.name}: line search failed, resetting the inverse Hessian')
            inv_hess = np.eye(free.size)
            fresh = True
            continue

        s = x_new - x
        g_new = gradient(x_new)
        y = g_new - g
        x, f, g = x_new, f_new, g_new
        log.debug(
            f'{spec.name}: iteration {iteration + 1} lcml={-f * n:.6f} step={alpha:.3g}'
        )
        if np.max(np.abs(s)) <= opts.step_tol:
            gnorm = np.max(np.abs(g)) * n
            tol = opts.gtol * max(1.0, abs(f))
            status = 'converged' if gnorm <= tol else 'step below tolerance'
            return _result(x, f, iteration + 1, gnorm <= tol, gnorm, tol, status)

        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if fresh:
                inv_hess = np.eye(free.size) * sy / (y @ y)
            rho = 1.0 / sy
            left = np.eye(free.size) - rho * np.outer(s, y)
            inv_hess = left @ inv_hess @ left.T + rho * np.outer(s, s)
            fresh = False

    gnorm = np.max(np.abs(g)) * n
    tol = opts.gtol * max(1.0, abs(f))
    return _result(
        x, f, opts.max_iter, gnorm <= tol, gnorm, tol, 'maximum iterations reached'
    )


def numerical_hessian(func, x, step=None):
    """
    Central-difference Hessian of a scalar function, symmetrised as (A + A') / 2.

    :param func: callable taking a 1-d array
    :param x: point of evaluation
    :param step: relative step (default eps ** (1/4))
    :return: d x d array
    """
    x = np.asarray(x, dtype=float)
    h = (step or HESSIAN_STEP) * np.maximum(1.0, np.abs(x))
    d = x.size
    hess = np.empty((d, d))
    f0 = func(x)

    def _at(*moves):
        point = x.copy()
        for index, amount in moves:
            point[index] += amount
        return func(point)

    for i in range(d):
        hess[i, i] = (_at((i, 2 * h[i])) - 2 * f0 + _at((i, -2 * h[i]))) / (
            4 * h[i] ** 2
        )
        for j in range(i):
            hess[i, j] = (
                _at((i, h[i]), (j, h[j]))
                - _at((i, h[i]), (j, -h[j]))
                - _at((i, -h[i]), (j, h[j]))
                + _at((i, -h[i]), (j, -h[j]))
            ) / (4 * h[i] * h[j])
            hess[j, i] = hess[i, j]
    if not np.all(np.isfinite(hess)):
        raise SingularMatrixException('Numerical Hessian has non-finite entries')
    return (hess + hess.T) / 2


def estimate_H_hessian(data, fit_result, likelihood):
    """
    Sensitivity estimate from the numerical Hessian of -lcml / N at the fitted value.

    :param data: PanelDataset
    :param fit_result: Fit
    :param likelihood: CompositeLikelihood in the fit's context
    :return: d x d array
    """
    n = data.n_individuals
    return numerical_hessian(
        lambda v: -likelihood.lcml(v) / n, fit_result.theta_hat.values
    )


def estimate_H1(score_set):
    """
    Sensitivity estimate from the outer products of the pair scores, scaled by 1/N.
    """
    per_pair = score_set.per_pair
    return np.einsum('npi,npj->ij', per_pair, per_pair) / per_pair.shape[0]


def estimate_J(score_set):
    """
    Variability estimate: outer products of the individual scores, scaled by 1/N.
    """
    per_individual = score_set.per_individual
    return per_individual.T @ per_individual / per_individual.shape[0]


@dataclass(frozen=True, eq=False)
class GodambeEstimates:
    """
    Sensitivity H, variability J and Godambe information G = H J^-1 H.

    ``h_gamma_gamma`` and ``g_gamma_gamma`` are the gamma blocks of H^-1 and G^-1.
    """

    H: np.ndarray
    J: np.ndarray
    G: np.ndarray
    which_H: Sensitivity
    gamma_indices: tuple = ()
    j_singular: bool = False

    @cached_property
    def H_inv(self):
        try:
            return np.linalg.inv(self.H)
        except np.linalg.LinAlgError as e:
            raise SingularMatrixException('Sensitivity matrix is singular') from e

    @cached_property
    def G_inv(self):
        if self.j_singular:
            return np.linalg.pinv(self.G, hermitian=True)
        g_inv = self.H_inv @ self.J @ self.H_inv.T
        return (g_inv + g_inv.T) / 2

    @property
    def h_gamma_gamma(self):
        gamma = list(self.gamma_indices)
        return self.H_inv[np.ix_(gamma, gamma)]

    @property
    def g_gamma_gamma(self):
        gamma = list(self.gamma_indices)
        return self.G_inv[np.ix_(gamma, gamma)]

    def trailing_blocks(self):
        """
        The gamma blocks obtained by moving gamma last and taking the trailing p x p
        blocks of the inverses.

        :return: tuple (H^gg, G^gg)
        """
        gamma = list(self.gamma_indices)
        order = [i for i in range(self.H.shape[0]) if i not in gamma] + gamma
        p = len(gamma)
        h_inv = np.linalg.inv(self.H[np.ix_(order, order)])
        g_inv = np.linalg.inv(self.G[np.ix_(order, order)])
        return h_inv[-p:, -p:], g_inv[-p:, -p:]

    def standard_errors(self, n_individuals):
        """
        Sandwich standard errors sqrt(diag(G^-1) / N).
        """
        return np.sqrt(np.clip(np.diag(self.G_inv), 0, None) / n_individuals)

    def restrict_to(self, indices):
        """
        The estimates for a sub-model using only the given coordinates.
        """
        indices = list(indices)
        block = np.ix_(indices, indices)
        return godambe(self.H[block], self.J[block], which_H=self.which_H)


def godambe(H, J, gamma_indices=(), which_H=Sensitivity.PAIRWISE_OUTER, rcond=1e-12):
    """
    Assemble G = H J^-1 H, falling back to the pseudo-inverse of J when it is singular.

    :param H: sensitivity estimate
    :param J: variability estimate
    :param gamma_indices: coordinates of the tested block
    :param which_H: how H was estimated
    :param rcond: relative singular value cut for J
    :return: GodambeEstimates
    """
    H = np.asarray(H, dtype=float)
    J = np.asarray(J, dtype=float)
    H = (H + H.T) / 2
    J = (J + J.T) / 2
    scale = max(np.abs(J).max(initial=0.0), np.finfo(float).tiny)
    singular = np.linalg.matrix_rank(J, tol=rcond * scale) < J.shape[0]
    if singular:
        log.warning('Variability matrix J is singular; using its pseudo-inverse')
        G = H @ np.linalg.pinv(J, rcond=rcond, hermitian=True) @ H
    else:
        G = H @ np.linalg.solve(J, H)
    return GodambeEstimates(
        H, J, (G + G.T) / 2, Sensitivity(which_H), tuple(gamma_indices), bool(singular)
    )


def godambe_at(
    fit_result, likelihood, sensitivity=Sensitivity.PAIRWISE_OUTER, scores=None
):
    """
    Scores and Godambe estimates at a fitted value.

    :param fit_result: Fit
    :param likelihood: CompositeLikelihood in the fit's context
    :param sensitivity: which sensitivity estimator to use
    :param scores: precomputed ScoreSet at the fitted value
    :return: tuple of (GodambeEstimates, ScoreSet)
    """
    if scores is None:
        scores = likelihood.score(fit_result.theta_hat)
    if Sensitivity(sensitivity) is Sensitivity.HESSIAN:
        H = estimate_H_hessian(likelihood.data, fit_result, likelihood)
    else:
        H = estimate_H1(scores)
    estimates = godambe(
        H, estimate_J(scores), likelihood.spec.gamma_indices, Sensitivity(sensitivity)
    )
    return estimates, scores
