#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

"""
Tests and information criteria for choosing between nested composite-likelihood
models.
"""

import dataclasses
import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    ContextMismatchException,
    NonBindingRestrictionException,
    NotPositiveDefiniteException,
    PsiSolverException,
    SingularMatrixException,
    SpecificationException,
)
from .gauss import MixtureSpec, chisq_sf, weighted_chisq_sf

log = logging.getLogger(__name__)

NEGATIVE_SLACK = 1e-10
PSI_TOLERANCE = 1e-8


class SelectionMethod(enum.Enum):
    CLR = 'clr'
    CLR_MIXTURE = 'clr_mixture'
    CCLR1 = 'cclr1'
    CCLR2 = 'cclr2'
    CCLR3 = 'cclr3'
    EL = 'el'


class CCLR3Form(enum.Enum):
    PACE = 'pace'
    PRINTED = 'printed'


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    statistic: float
    dof: float
    p_value: float
    method: SelectionMethod
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ELState:
    """
    Solution of the empirical-likelihood multiplier problem.

    ``el_value`` is sum_n log(1 + psi's_n), without a leading factor.
    """

    psi: np.ndarray
    el_value: float
    residual: float
    n_iterations: int


@dataclass(frozen=True)
class ICResult:
    claic: float
    clbic: float
    penalty_trace: float
    lcml_value: float
    n: int


def _check_context(fit_unrestricted, fit_restricted):
    if fit_unrestricted.context != fit_restricted.context:
        raise ContextMismatchException(
            f'Fits were computed in different contexts: {fit_unrestricted.context} vs '
            f'{fit_restricted.context}'
        )


def _clip(value, label, slack=NEGATIVE_SLACK):
    if value < -slack:
        log.warning(
            f'Negative {label} statistic ({value:.3g}); the restricted fit is better '
            f'than the unrestricted one, check convergence. Setting it to 0'
        )
    return max(float(value), 0.0)


def _p_value(statistic, dof):
    if dof <= 0:
        return 1.0
    return float(np.clip(chisq_sf(statistic, dof), 0.0, 1.0))


def _dof(fit_restricted):
    return len(fit_restricted.restriction[0]) if fit_restricted.restricted else 0


def clr(fit_unrestricted, fit_restricted):
    """
    Composite likelihood ratio 2 [lcml(unrestricted) - lcml(restricted)], clipped at 0.

    :param fit_unrestricted: Fit
    :param fit_restricted: Fit in the same data and SJ context
    :return: float
    """
    _check_context(fit_unrestricted, fit_restricted)
    raw = 2 * (fit_unrestricted.lcml_value - fit_restricted.lcml_value)
    return _clip(raw, 'CLR')


def naive_clr_test(clr_value, p):
    """
    CLR referred to chi-square with p degrees of freedom, without any correction.
    """
    return TestResult(clr_value, p, _p_value(clr_value, p), SelectionMethod.CLR)


def clr_mixture_test(clr_value, lambdas, draws=100_000, seed=0):
    """
    CLR referred to its weighted chi-square limit sum_j lambda_j K_j^2.
    """
    lambdas = _check_lambdas(lambdas)
    p_value = weighted_chisq_sf(clr_value, MixtureSpec(tuple(lambdas), draws, seed))
    return TestResult(
        clr_value,
        lambdas.size,
        p_value,
        SelectionMethod.CLR_MIXTURE,
        {'lambdas': lambdas.tolist()},
    )


def eigen_lambdas(godambe_restricted, gamma_indices=None):
    """
    Eigenvalues of (H^gg)^-1 G^gg, sorted in descending order.

    H^gg and G^gg are the gamma blocks of H^-1 and G^-1. The product is not symmetric,
    so the eigenvalues come from the symmetric-definite pencil (G^gg, H^gg), which has
    the spectrum of (H^gg)^-1/2 G^gg (H^gg)^-1/2.

    :param godambe_restricted: GodambeEstimates at the restricted fit
    :param gamma_indices: override of the tested block
    :return: 1-d array
    """
    estimates = godambe_restricted
    if gamma_indices is not None:
        gamma = list(gamma_indices)
        h_gg = estimates.H_inv[np.ix_(gamma, gamma)]
        g_gg = estimates.G_inv[np.ix_(gamma, gamma)]
    else:
        h_gg, g_gg = estimates.h_gamma_gamma, estimates.g_gamma_gamma
    try:
        values = scipy.linalg.eigh(g_gg, h_gg, eigvals_only=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteException('H^gg is not positive definite') from e
    return np.sort(values)[::-1]


def _check_lambdas(lambdas):
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if lambdas.size == 0 or np.any(lambdas <= 0):
        raise NotPositiveDefiniteException(
            f'Adjustment eigenvalues must be positive, got {lambdas.tolist()}'
        )
    return lambdas


def cclr1(clr_value, lambdas):
    """
    First-moment corrected CLR: CLR / mean(lambda), referred to chi-square with p
    degrees of freedom.
    """
    lambdas = _check_lambdas(lambdas)
    omega = lambdas.mean()
    statistic = clr_value / omega
    return TestResult(
        statistic,
        lambdas.size,
        _p_value(statistic, lambdas.size),
        SelectionMethod.CCLR1,
        {'lambdas': lambdas.tolist(), 'omega': omega},
    )


def cclr2(clr_value, lambdas):
    """
    First and second moment corrected CLR: CLR / kappa referred to chi-square with nu
    degrees of freedom, kappa = sum(l^2)/sum(l) and nu = sum(l)^2/sum(l^2).
    """
    lambdas = _check_lambdas(lambdas)
    kappa = np.sum(lambdas**2) / np.sum(lambdas)
    nu = np.sum(lambdas) ** 2 / np.sum(lambdas**2)
    statistic = clr_value / kappa
    return TestResult(
        statistic,
        nu,
        _p_value(statistic, nu),
        SelectionMethod.CCLR2,
        {'lambdas': lambdas.tolist(), 'kappa': kappa, 'nu': nu},
    )


def cclr3(clr_value, score_gamma, godambe_restricted, form=CCLR3Form.PACE):
    """
    Reparametrisation-invariant CLR, scaled by a ratio of quadratic forms in the gamma
    score at the restricted fit and referred to chi-square with p degrees of freedom.

    The numerator is s' H^gg (G^gg)^-1 H^gg s. The PACE form divides by s' H^gg s; the
    PRINTED form divides by s' (H^gg)^-1 s.

    :param clr_value: CLR statistic
    :param score_gamma: gamma part of the total score at the restricted fit
    :param godambe_restricted: GodambeEstimates at the restricted fit
    :param form: CCLR3Form
    :return: TestResult
    """
    form = CCLR3Form(form)
    s = np.atleast_1d(np.asarray(score_gamma, dtype=float))
    h_gg = godambe_restricted.h_gamma_gamma
    g_gg = godambe_restricted.g_gamma_gamma
    try:
        weighted = h_gg @ s
        numerator = weighted @ np.linalg.solve(g_gg, weighted)
        if form is CCLR3Form.PACE:
            denominator = s @ h_gg @ s
        else:
            denominator = s @ np.linalg.solve(h_gg, s)
    except np.linalg.LinAlgError as e:
        raise SingularMatrixException('Singular gamma block in cCLR3') from e

    scale = (s @ s) * max(np.abs(h_gg).max(), np.finfo(float).tiny)
    if scale == 0 or abs(denominator) <= 1e-14 * scale:
        raise NonBindingRestrictionException(
            'Gamma score at the restricted fit is numerically zero'
        )
    ratio = numerator / denominator
    statistic = clr_value * ratio
    p = s.size
    return TestResult(
        statistic,
        p,
        _p_value(statistic, p),
        SelectionMethod.CCLR3,
        {'ratio': ratio, 'form': form.value},
    )


def solve_psi(scores, tol=PSI_TOLERANCE, max_iter=100):
    """
    Solve for the empirical-likelihood multiplier psi with
    sum_n s_n / (1 + psi's_n) = 0.

    Newton ascent on the concave sum_n log*(1 + psi's_n), where log* continues the
    logarithm quadratically below 1/N so every iterate stays in the domain.

    :param scores: (N, d) per-individual scores
    :param tol: sup-norm tolerance on the mean of s_n / (1 + psi's_n)
    :param max_iter: maximum Newton iterations
    :return: ELState
    """
    S = np.asarray(scores, dtype=float)
    n, d = S.shape
    threshold = 1.0 / n
    log_threshold = np.log(threshold)

    def _objective(psi):
        z = 1 + S @ psi
        low = z < threshold
        with np.errstate(divide='ignore', invalid='ignore'):
            value = np.where(
                low,
                log_threshold - 1.5 + 2 * z / threshold - z**2 / (2 * threshold**2),
                np.log(np.where(low, 1.0, z)),
            )
        return value.sum(), z, low

    def _residual(z):
        if np.any(z <= 0):
            return np.inf
        return float(np.max(np.abs((S / z[:, None]).mean(axis=0))))

    psi = np.zeros(d)
    value, z, low = _objective(psi)
    residual = _residual(z)
    iteration = 0
    while iteration < max_iter and not (residual <= tol and not low.any()):
        iteration += 1
        first = np.where(low, 2 / threshold - z / threshold**2, 1 / np.where(low, 1, z))
        second = np.where(low, 1 / threshold**2, 1 / np.where(low, 1, z) ** 2)
        grad = S.T @ first
        neg_hess = S.T @ (second[:, None] * S)
        try:
            step = np.linalg.solve(neg_hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(neg_hess, grad, rcond=None)[0]

        t = 1.0
        slope = grad @ step
        while t > 1e-12:
            candidate = psi + t * step
            new_value, new_z, new_low = _objective(candidate)
            if new_value >= value + 1e-4 * t * slope:
                break
            t /= 2
        else:
            break
        psi, value, z, low = candidate, new_value, new_z, new_low
        residual = _residual(z)
        if np.max(np.abs(t * step)) <= 1e-15 * max(1.0, np.max(np.abs(psi))):
            break

    if not (residual <= tol and not low.any()):
        raise PsiSolverException(
            'Empirical likelihood multiplier did not converge: '
            f'residual {residual:.3g} after {iteration} iterations',
            residual=residual,
            n_iterations=iteration,
        )
    log.debug(f'psi solved in {iteration} iterations, residual {residual:.3g}')
    return ELState(psi, float(np.log(z).sum()), residual, iteration)


def el_test(fit_unrestricted, fit_restricted, scores_unrestricted, scores_restricted):
    """
    Empirical likelihood ratio test 2 [el(restricted) - el(unrestricted)], referred to
    chi-square with p degrees of freedom and clipped at 0.

    :param fit_unrestricted: Fit
    :param fit_restricted: Fit in the same context
    :param scores_unrestricted: ScoreSet at the unrestricted fit
    :param scores_restricted: ScoreSet at the restricted fit
    :return: TestResult
    """
    _check_context(fit_unrestricted, fit_restricted)
    p = _dof(fit_restricted)
    if p == 0:
        return TestResult(0.0, 0, 1.0, SelectionMethod.EL)
    state_u = solve_psi(scores_unrestricted.per_individual)
    state_r = solve_psi(scores_restricted.per_individual)
    statistic = _clip(2 * (state_r.el_value - state_u.el_value), 'EL', slack=1e-8)
    return TestResult(
        statistic,
        p,
        _p_value(statistic, p),
        SelectionMethod.EL,
        {
            'el_unrestricted': state_u.el_value,
            'el_restricted': state_r.el_value,
            'residual_unrestricted': state_u.residual,
            'residual_restricted': state_r.residual,
            'psi_norm_unrestricted': float(np.max(np.abs(state_u.psi))),
        },
    )


def information_criteria(fit_result, godambe_estimates):
    """
    CLAIC = -2 lcml + 2 tr(J H^-1) and CLBIC = -2 lcml + log(n) tr(J H^-1), with the
    trace taken over the coordinates the model estimates.

    :param fit_result: Fit
    :param godambe_estimates: GodambeEstimates at the fit (full parameter vector)
    :return: ICResult
    """
    free = list(fit_result.free_indices)
    block = np.ix_(free, free)
    H = godambe_estimates.H[block]
    J = godambe_estimates.J[block]
    try:
        trace = float(np.trace(np.linalg.solve(H, J))) if free else 0.0
    except np.linalg.LinAlgError as e:
        raise SingularMatrixException('Sensitivity matrix is singular') from e
    n = fit_result.n_individuals
    lcml_value = fit_result.lcml_value
    return ICResult(
        -2 * lcml_value + 2 * trace,
        -2 * lcml_value + np.log(n) * trace,
        trace,
        lcml_value,
        n,
    )


def run_test(
    method,
    fit_unrestricted,
    fit_restricted,
    godambe_restricted,
    scores_unrestricted,
    scores_restricted,
    cclr3_form=CCLR3Form.PACE,
    mixture_draws=100_000,
    seed=0,
):
    """
    Run one of the nested-model tests on a pair of fits made in the same context.

    :param method: SelectionMethod or its value
    :param fit_unrestricted: Fit of the larger model
    :param fit_restricted: Fit of the restricted model
    :param godambe_restricted: GodambeEstimates at the restricted fit
    :param scores_unrestricted: ScoreSet at the unrestricted fit
    :param scores_restricted: ScoreSet at the restricted fit
    :param cclr3_form: CCLR3Form
    :param mixture_draws: Monte Carlo draws for CLR_MIXTURE
    :param seed: seed of the CLR_MIXTURE draws
    :return: TestResult
    """
    method = SelectionMethod(method)
    if method is SelectionMethod.EL:
        return el_test(
            fit_unrestricted, fit_restricted, scores_unrestricted, scores_restricted
        )
    if not fit_restricted.restricted:
        raise SpecificationException('The restricted model pins no coordinates')
    tested = tuple(fit_restricted.restriction[0])
    if tested != tuple(godambe_restricted.gamma_indices):
        godambe_restricted = dataclasses.replace(
            godambe_restricted, gamma_indices=tested
        )
    clr_value = clr(fit_unrestricted, fit_restricted)
    if method is SelectionMethod.CLR:
        return naive_clr_test(clr_value, _dof(fit_restricted))
    if method is SelectionMethod.CCLR3:
        gamma = list(godambe_restricted.gamma_indices)
        score_gamma = scores_restricted.total[gamma]
        return cclr3(clr_value, score_gamma, godambe_restricted, cclr3_form)
    lambdas = eigen_lambdas(godambe_restricted)
    if method is SelectionMethod.CCLR1:
        return cclr1(clr_value, lambdas)
    if method is SelectionMethod.CCLR2:
        return cclr2(clr_value, lambdas)
    return clr_mixture_test(clr_value, lambdas, mixture_draws, seed)
