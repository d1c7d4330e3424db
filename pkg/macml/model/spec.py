#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..lib.errors import SpecificationException

log = logging.getLogger(__name__)

#: marks a FREE entry of the Cholesky pattern
FREE = np.nan


def omega_pattern(p_alpha, kind='diagonal', blocks=None):
    """
    Build a lower-triangular Cholesky pattern: NaN marks a FREE entry, numbers are FIXED
    values.

    :param p_alpha: number of random coefficients
    :param kind: 'diagonal', 'full', 'blocks' or 'none' (Omega = 0)
    :param blocks: for 'blocks', a list of index groups (0-based) that may correlate
    :return: p_alpha x p_alpha float array
    """
    pattern = np.zeros((p_alpha, p_alpha))
    if kind == 'none':
        return pattern
    if kind == 'diagonal':
        np.fill_diagonal(pattern, FREE)
    elif kind == 'full':
        pattern[np.tril_indices(p_alpha)] = FREE
    elif kind == 'blocks':
        np.fill_diagonal(pattern, FREE)
        for block in blocks or []:
            for i in block:
                for j in block:
                    if j < i:
                        pattern[i, j] = FREE
    else:
        raise SpecificationException(f'Unknown covariance structure "{kind}"')
    return pattern


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """
    A mixed panel probit specification.

    Utilities are U_ntk = X_ntk beta + Z_ntk alpha_n + e_ntk with
    alpha_n ~ N(0, L L') and e_ntk iid N(0, sigma_diag).

    :param p_beta: number of fixed-coefficient covariates
    :param p_alpha: number of random-coefficient covariates
    :param omega_pattern: lower-triangular pattern over L (NaN = FREE, else FIXED value)
    :param sigma_diag: error variance, not estimated
    :param gamma_indices: indices into the packed vector forming the tested block
    :param gamma0: restriction values for the gamma block
    :param pinned: the gamma indices this model pins to gamma0
    :param name: label used in records
    """

    p_beta: int
    p_alpha: int
    omega_pattern: np.ndarray
    sigma_diag: float = 0.5
    gamma_indices: tuple = ()
    gamma0: tuple = ()
    pinned: tuple = ()
    name: str = 'model'

    def __post_init__(self):
        pattern = np.array(self.omega_pattern, dtype=float).reshape(
            self.p_alpha, self.p_alpha
        )
        pattern[np.triu_indices(self.p_alpha, 1)] = 0.0
        pattern.setflags(write=False)
        object.__setattr__(self, 'omega_pattern', pattern)
        object.__setattr__(
            self, 'gamma_indices', tuple(int(i) for i in self.gamma_indices)
        )
        object.__setattr__(self, 'gamma0', tuple(float(v) for v in self.gamma0))
        object.__setattr__(self, 'pinned', tuple(sorted(int(i) for i in self.pinned)))

        errors = {}
        diag = np.diag(pattern)
        # an all-zero pattern is 'none': no random coefficients at all
        if pattern.any() or np.isnan(pattern).any():
            if np.any(~np.isnan(diag) & (diag <= 0)):
                errors['omega_pattern'] = (
                    'fixed diagonal entries of L must be strictly positive'
                )
        if not self.sigma_diag > 0:
            errors['sigma_diag'] = 'error variance must be positive'
        if len(self.gamma0) != len(self.gamma_indices):
            errors['gamma0'] = 'gamma0 must have one value per gamma index'
        if len(set(self.gamma_indices)) != len(self.gamma_indices) or any(
            not 0 <= i < self.d for i in self.gamma_indices
        ):
            errors['gamma_indices'] = (
                f'gamma indices must be distinct and in 0..{self.d - 1}'
            )
        if not set(self.pinned) <= set(self.gamma_indices):
            errors['pinned'] = 'only gamma coordinates can be pinned'
        if errors:
            raise SpecificationException(f'Invalid model specification: {errors}')

    @cached_property
    def free_positions(self):
        """
        FREE entries of L as (row, col), row-major over the lower triangle.
        """
        rows, cols = np.tril_indices(self.p_alpha)
        free = np.isnan(self.omega_pattern[rows, cols])
        return tuple(zip(rows[free].tolist(), cols[free].tolist()))

    @property
    def d(self):
        return self.p_beta + len(self.free_positions)

    @cached_property
    def layout(self):
        names = [f'beta_{i + 1}' for i in range(self.p_beta)]
        names += [f'L_{i + 1}{j + 1}' for i, j in self.free_positions]
        return tuple(names)

    def index_of(self, name):
        try:
            return self.layout.index(name)
        except ValueError:
            raise SpecificationException(
                f'"{name}" is not a parameter of model {self.name}'
            ) from None

    @property
    def p(self):
        return len(self.gamma_indices)

    @property
    def tau_indices(self):
        gamma = set(self.gamma_indices)
        return tuple(i for i in range(self.d) if i not in gamma)

    @property
    def restriction(self):
        """
        The (indices, values) pinned by this model, or None for an unrestricted model.
        """
        if not self.pinned:
            return None
        lookup = dict(zip(self.gamma_indices, self.gamma0))
        return self.pinned, tuple(lookup[i] for i in self.pinned)

    def fixed_cholesky(self):
        """
        L with FIXED values in place and zeros at FREE entries.
        """
        return np.nan_to_num(self.omega_pattern, nan=0.0)

    def with_pinned(self, pinned, name=None):
        """
        The same parameterisation with a different set of pinned gamma coordinates.

        :param pinned: 'all', 'none' or an iterable of indices
        :param name: optional new name
        :return: ModelSpec
        """
        if pinned == 'all':
            pinned = self.gamma_indices
        elif pinned == 'none':
            pinned = ()
        return ModelSpec(
            self.p_beta,
            self.p_alpha,
            self.omega_pattern,
            self.sigma_diag,
            self.gamma_indices,
            self.gamma0,
            tuple(pinned),
            name or self.name,
        )

    def same_parameterisation(self, other):
        return (
            self.p_beta == other.p_beta
            and self.p_alpha == other.p_alpha
            and np.array_equal(self.omega_pattern, other.omega_pattern, equal_nan=True)
            and self.sigma_diag == other.sigma_diag
            and self.gamma_indices == other.gamma_indices
            and self.gamma0 == other.gamma0
        )


@dataclass(frozen=True, eq=False)
class Theta:
    """
    A packed parameter vector with its layout names.
    """

    values: np.ndarray
    names: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != len(self.names):
            raise SpecificationException(
                f'Theta has {values.size} values for {len(self.names)} names'
            )
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'names', tuple(self.names))

    def __len__(self):
        return self.values.size

    def named(self):
        return dict(zip(self.names, self.values.tolist()))

    def with_values(self, values):
        return Theta(values, self.names)


def pack(beta, L, spec):
    """
    Pack fixed coefficients and the FREE entries of the Cholesky factor into a Theta.

    :param beta: length p_beta vector
    :param L: p_alpha x p_alpha lower-triangular matrix
    :param spec: ModelSpec
    :return: Theta
    """
    beta = np.asarray(beta, dtype=float).ravel()
    L = np.asarray(L, dtype=float).reshape(spec.p_alpha, spec.p_alpha)
    if beta.size != spec.p_beta:
        raise SpecificationException(f'Expected {spec.p_beta} betas, got {beta.size}')
    if np.any(np.triu(L, 1) != 0):
        raise SpecificationException('L must be lower triangular')
    fixed = ~np.isnan(spec.omega_pattern)
    if np.any(L[fixed] != spec.omega_pattern[fixed]):
        raise SpecificationException('L differs from the spec at FIXED entries')
    free = [L[i, j] for i, j in spec.free_positions]
    return Theta(np.concatenate([beta, free]), spec.layout)


def unpack(theta, spec):
    """
    Split a Theta back into (beta, L).

    :param theta: Theta or array of length d
    :param spec: ModelSpec
    :return: tuple of (beta, L)
    """
    if isinstance(theta, Theta):
        values = theta.values
    else:
        values = np.asarray(theta, dtype=float)
    if values.size != spec.d:
        raise SpecificationException(f'Expected {spec.d} parameters, got {values.size}')
    beta = values[: spec.p_beta].copy()
    L = spec.fixed_cholesky()
    for value, (i, j) in zip(values[spec.p_beta:], spec.free_positions):
        L[i, j] = value
    return beta, L


def omega(theta, spec):
    """
    The random-coefficient covariance L L'.
    """
    _, L = unpack(theta, spec)
    return L @ L.T


def heuristic_init(spec, scale=1.0):
    """
    Starting values for real data: beta = 0 and L = scale * I on its FREE entries.

    :param spec: ModelSpec
    :param scale: diagonal value for free diagonal entries of L
    :return: Theta
    """
    L = spec.fixed_cholesky()
    for i, j in spec.free_positions:
        if i == j:
            L[i, j] = scale
    theta = pack(np.zeros(spec.p_beta), L, spec)
    if spec.restriction is not None:
        theta = apply_restriction(theta, *spec.restriction)
    return theta


def apply_restriction(theta, indices, values):
    """
    Copy of theta with the given coordinates set to the given values.
    """
    new = theta.values.copy()
    new[list(indices)] = values
    return theta.with_values(new)
