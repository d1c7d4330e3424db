#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

"""
Model averaging over nested candidates: information-criterion weights and weights
minimising the asymptotic mean squared error of a focus parameter under local
misspecification.
"""

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from ..model.spec import Theta
from .errors import ContextMismatchException, SpecificationException
from .likelihood import FD_STEP

log = logging.getLogger(__name__)

WEIGHT_DENOMINATOR_FLOOR = 1e-12


class FocusKind(enum.Enum):
    COORDINATE = 'coordinate'
    LINEAR = 'linear'
    COORD_SET = 'set'
    PAIR_PROBABILITY = 'pair'


@dataclass(frozen=True, eq=False)
class Focus:
    """
    The scalar (or, for COORD_SET, summed) quantity whose MSE the weights minimise.
    """

    kind: FocusKind
    index: int = None
    coefficients: np.ndarray = None
    indices: tuple = ()
    pair: tuple = None

    @classmethod
    def coordinate(cls, index):
        return cls(FocusKind.COORDINATE, index=int(index))

    @classmethod
    def linear(cls, coefficients):
        return cls(FocusKind.LINEAR, coefficients=np.asarray(coefficients, dtype=float))

    @classmethod
    def coord_set(cls, indices):
        return cls(FocusKind.COORD_SET, indices=tuple(int(i) for i in indices))

    @classmethod
    def pair_probability(cls, n, t, t2):
        return cls(FocusKind.PAIR_PROBABILITY, pair=(int(n), int(t), int(t2)))

    @classmethod
    def parse(cls, text, spec):
        """
        Parse a focus declaration such as ``coordinate:beta_3``,
        ``linear:beta_1=1,beta_2=-1``, ``set:L_21,L_31`` or ``pair:1,1,2`` (1-based
        individual and occasions).

        :param text: the declaration
        :param spec: ModelSpec naming the coordinates
        :return: Focus
        """
        kind, _, body = text.partition(':')
        kind = kind.strip().lower()
        items = [item.strip() for item in body.split(',') if item.strip()]
        if not items:
            raise SpecificationException(f'Empty focus declaration "{text}"')
        if kind == FocusKind.COORDINATE.value:
            return cls.coordinate(spec.index_of(items[0]))
        if kind == FocusKind.LINEAR.value:
            coefficients = np.zeros(spec.d)
            for item in items:
                name, _, value = item.partition('=')
                coefficients[spec.index_of(name.strip())] = float(value or 1)
            return cls.linear(coefficients)
        if kind == FocusKind.COORD_SET.value:
            return cls.coord_set([spec.index_of(item) for item in items])
        if kind == FocusKind.PAIR_PROBABILITY.value and len(items) == 3:
            n, t, t2 = (int(item) - 1 for item in items)
            return cls.pair_probability(n, t, t2)
        raise SpecificationException(f'Cannot parse focus declaration "{text}"')

    def _check_likelihood(self, likelihood):
        if likelihood is None:
            raise SpecificationException('A pair-probability focus needs a likelihood')

    def value(self, theta, likelihood=None):
        """
        The focus at theta; an array of coordinates for COORD_SET.
        """
        values = theta.values if isinstance(theta, Theta) else np.asarray(theta, float)
        if self.kind is FocusKind.COORDINATE:
            return float(values[self.index])
        if self.kind is FocusKind.LINEAR:
            return float(self.coefficients @ values)
        if self.kind is FocusKind.COORD_SET:
            return values[list(self.indices)].copy()
        self._check_likelihood(likelihood)
        return float(np.exp(likelihood.pair_loglik(*self.pair, values)))

    def gradients(self, theta, likelihood=None):
        """
        Gradients of the focus at theta; one per summed coordinate for COORD_SET.

        :return: list of d-vectors
        """
        values = theta.values if isinstance(theta, Theta) else np.asarray(theta, float)
        d = values.size
        if self.kind is FocusKind.COORDINATE:
            return [np.eye(d)[self.index]]
        if self.kind is FocusKind.LINEAR:
            return [self.coefficients.copy()]
        if self.kind is FocusKind.COORD_SET:
            return [np.eye(d)[i] for i in self.indices]
        self._check_likelihood(likelihood)
        grad = np.empty(d)
        for i in range(d):
            h = FD_STEP * max(1.0, abs(values[i]))
            up, down = values.copy(), values.copy()
            up[i] += h
            down[i] -= h
            grad[i] = (self.value(up, likelihood) - self.value(down, likelihood)) / (
                up[i] - down[i]
            )
        if not np.all(np.isfinite(grad)):
            raise SpecificationException('Focus gradient is not finite')
        return [grad]


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """
    Nested candidate models sharing one parameterisation, each pinning a subset of the
    gamma coordinates to gamma0, with their fits.
    """

    specs: tuple
    fits: tuple
    wide_index: int = None

    def __post_init__(self):
        specs, fits = tuple(self.specs), tuple(self.fits)
        object.__setattr__(self, 'specs', specs)
        object.__setattr__(self, 'fits', fits)
        if not specs or len(specs) != len(fits):
            raise SpecificationException('Need one fit per candidate model')
        wide = [m for m, spec in enumerate(specs) if not spec.pinned]
        wide_index = (
            self.wide_index if self.wide_index is not None else (wide or [None])[0]
        )
        if wide_index is None or specs[wide_index].pinned:
            raise SpecificationException('The candidate set needs a wide model')
        object.__setattr__(self, 'wide_index', wide_index)

        reference = specs[wide_index]
        lookup = dict(zip(reference.gamma_indices, reference.gamma0))
        for spec, fit_result in zip(specs, fits):
            if not spec.same_parameterisation(reference):
                raise SpecificationException(
                    f'Candidate {spec.name} does not share the wide parameterisation'
                )
            values = fit_result.theta_hat.values
            if any(values[i] != lookup[i] for i in spec.pinned):
                raise SpecificationException(
                    f'Candidate {spec.name} has pinned coordinates away from gamma0'
                )
            if fit_result.context != fits[wide_index].context:
                raise ContextMismatchException(
                    f'Candidate {spec.name} was fitted in a different context'
                )

    @property
    def wide(self):
        return self.fits[self.wide_index]

    @property
    def names(self):
        return tuple(spec.name for spec in self.specs)

    def __len__(self):
        return len(self.specs)


@dataclass(frozen=True, eq=False)
class AveragingProblem:
    delta_hat: np.ndarray
    H: np.ndarray
    J: np.ndarray
    Lambda: np.ndarray
    lambda_bias: np.ndarray
    F: np.ndarray
    weights: np.ndarray
    rank_F: int
    min_eigenvalue_F: float
    flagged: tuple = field(default=())


@dataclass(frozen=True, eq=False)
class AveragedEstimate:
    theta: Theta
    focus_value: object
    weights: np.ndarray


def ic_weights(ics):
    """
    Smoothed information-criterion weights exp(-IC_m / 2), normalised, computed relative
    to the smallest IC.

    :param ics: information criteria of the candidates
    :return: weight vector
    """
    ics = np.asarray(ics, dtype=float)
    if not np.all(np.isfinite(ics)):
        raise ValueError('Information criteria must be finite')
    raw = np.exp(-0.5 * (ics - ics.min()))
    return raw / raw.sum()


def build_problem(candidates, focus, godambe_wide, likelihood=None):
    """
    Assemble the N-scaled asymptotic MSE matrix F of the candidate estimators of the
    focus and its optimal weights.

    F_ij = (lambda_i delta)(lambda_j delta)' + dmu Lambda_i J (dmu Lambda_j)' with
    Lambda_m = E_m (pi_m H pi_m')^-1 pi_m and
    lambda_m = dmu Lambda_m H_gamma - dmu_gamma.

    :param candidates: CandidateSet
    :param focus: Focus
    :param godambe_wide: GodambeEstimates at the wide fit
    :param likelihood: CompositeLikelihood of the wide model (pair-probability focus)
    :return: AveragingProblem
    """
    wide = candidates.wide
    spec = candidates.specs[candidates.wide_index]
    gamma = list(spec.gamma_indices)
    theta_wide = wide.theta_hat.values
    delta_hat = np.sqrt(wide.n_individuals) * (
        theta_wide[gamma] - np.array(spec.gamma0)
    )
    H, J = godambe_wide.H, godambe_wide.J
    d = H.shape[0]

    lambdas, flagged = [], []
    for m, candidate in enumerate(candidates.specs):
        pinned = set(candidate.pinned)
        free = [i for i in range(d) if i not in pinned]
        block = H[np.ix_(free, free)]
        with np.errstate(divide='ignore', invalid='ignore'):
            cond = np.linalg.cond(block) if block.size else 1.0
        if not np.isfinite(cond) or cond > 1 / np.finfo(float).eps:
            log.warning(
                f'Candidate {candidate.name}: projected sensitivity is singular'
            )
            flagged.append(m)
            inverse = np.linalg.pinv(block, hermitian=True)
        else:
            inverse = np.linalg.inv(block)
        embedded = np.zeros((d, d))
        embedded[np.ix_(free, free)] = inverse
        lambdas.append(embedded)
    lambdas = np.array(lambdas)

    gradients = focus.gradients(theta_wide, likelihood)
    M = len(candidates)
    F = np.zeros((M, M))
    biases = []
    for grad in gradients:
        loadings = np.einsum('i,mij->mj', grad, lambdas)
        bias = loadings @ H[:, gamma] - grad[gamma]
        biases.append(bias)
        shift = bias @ delta_hat
        F += np.outer(shift, shift) + loadings @ J @ loadings.T
    F = (F + F.T) / 2

    eigenvalues = np.linalg.eigvalsh(F)
    if eigenvalues.min() < -1e-8 * max(1.0, eigenvalues.max()):
        log.warning(f'MSE matrix has a negative eigenvalue {eigenvalues.min():.3g}')
    rank = int(np.linalg.matrix_rank(F, hermitian=True))
    return AveragingProblem(
        delta_hat,
        H,
        J,
        lambdas,
        np.array(biases),
        F,
        solve_weights(F),
        rank,
        float(eigenvalues.min()),
        tuple(flagged),
    )


def solve_weights(F, rcond=1e-10):
    """
    Weights minimising w'Fw subject to sum(w) = 1: w = F+ 1 / (1'F+ 1).

    Weights may be negative. Falls back to equal weights when 1'F+ 1 is not positive.

    :param F: symmetric M x M matrix
    :param rcond: relative singular value cut of the pseudo-inverse
    :return: weight vector
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    M = F.shape[0]
    raw = np.linalg.pinv((F + F.T) / 2, rcond=rcond, hermitian=True) @ np.ones(M)
    denominator = raw.sum()
    if denominator <= WEIGHT_DENOMINATOR_FLOOR:
        log.warning('MSE matrix gives no usable weights; falling back to equal weights')
        return np.full(M, 1.0 / M)
    return raw / denominator


def average_estimates(candidates, weights, focus=None, likelihood=None):
    """
    Weighted average of the candidates' estimates, pinned coordinates entering at their
    gamma0 values.

    :param candidates: CandidateSet
    :param weights: weight vector summing to 1
    :param focus: optional Focus to average as well
    :param likelihood: CompositeLikelihood (pair-probability focus)
    :return: AveragedEstimate
    """
    weights = np.asarray(weights, dtype=float)
    if weights.size != len(candidates):
        raise SpecificationException(
            f'{weights.size} weights for {len(candidates)} candidates'
        )
    estimates = []
    for spec, fit_result in zip(candidates.specs, candidates.fits):
        values = fit_result.theta_hat.values.copy()
        lookup = dict(zip(spec.gamma_indices, spec.gamma0))
        for i in spec.pinned:
            values[i] = lookup[i]
        estimates.append(values)
    estimates = np.array(estimates)
    theta = candidates.wide.theta_hat.with_values(weights @ estimates)
    focus_value = None
    if focus is not None:
        focus_values = [focus.value(values, likelihood) for values in estimates]
        focus_value = np.tensordot(weights, np.array(focus_values), axes=1)
        focus_value = float(focus_value) if np.ndim(focus_value) == 0 else focus_value
    return AveragedEstimate(theta, focus_value, weights)
