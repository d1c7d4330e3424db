#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..lib.errors import DegenerateVarianceException
from .spec import unpack


@dataclass(frozen=True, eq=False)
class PairMoments:
    """
    Standardized upper limits ``b`` and correlation ``R`` of a pair probability, which
    equals Phi_{2K-2}(b; 0, R).
    """

    b: np.ndarray
    R: np.ndarray

    @property
    def dim(self):
        return self.b.size


def occasion_pairs(n_occasions):
    """
    All unordered occasion pairs (t, t2) with t < t2, in lexicographic order.

    :return: int array of shape (T(T-1)/2, 2)
    """
    return np.array(list(combinations(range(n_occasions), 2)), dtype=np.intp).reshape(
        -1, 2
    )


@dataclass(frozen=True, eq=False)
class DifferencedDesign:
    """
    Covariates differenced against the chosen alternative of each occasion.

    ``x_fixed`` is (N, T, K-1, p_beta) and ``x_random`` is (N, T, K-1, p_alpha); row k
    of an occasion holds X_k - X_y for the non-chosen alternatives k in ascending order.
    """

    x_fixed: np.ndarray
    x_random: np.ndarray
    pairs: np.ndarray

    @classmethod
    def from_dataset(cls, data):
        choices = data.choices
        k = data.n_alternatives
        steps = np.arange(k - 1)[None, None, :]
        others = steps + (steps >= choices[:, :, None])

        def _difference(x):
            chosen = np.take_along_axis(x, choices[:, :, None, None], axis=2)
            return np.take_along_axis(x, others[..., None], axis=2) - chosen

        return cls(
            _difference(data.x_fixed),
            _difference(data.x_random),
            occasion_pairs(data.n_occasions),
        )

    @property
    def n_individuals(self):
        return self.x_fixed.shape[0]

    @property
    def n_pairs(self):
        return self.pairs.shape[0]

    def subset(self, individuals):
        return DifferencedDesign(
            self.x_fixed[individuals], self.x_random[individuals], self.pairs
        )


def error_structure(n_alternatives):
    """
    Covariance pattern of the differenced errors of a pair of occasions, per unit error
    variance: I + 11' within an occasion, zero across occasions.
    """
    block = np.eye(n_alternatives - 1) + 1.0
    m = 2 * (n_alternatives - 1)
    out = np.zeros((m, m))
    out[: m // 2, : m // 2] = block
    out[m // 2:, m // 2:] = block
    return out


def pair_moment_arrays(design, beta, L, sigma_diag):
    """
    Moments of every pair probability of every individual.

    :param design: DifferencedDesign
    :param beta: fixed coefficients
    :param L: Cholesky factor of the random-coefficient covariance
    :param sigma_diag: error variance
    :return: tuple (b, R) of shapes (N, P, m) and (N, P, m, m) with m = 2K - 2
    """
    first, second = design.pairs[:, 0], design.pairs[:, 1]
    mean_diff = design.x_fixed @ beta
    loading = design.x_random @ L
    mean = np.concatenate([mean_diff[:, first], mean_diff[:, second]], axis=-1)
    stacked = np.concatenate([loading[:, first], loading[:, second]], axis=-2)
    m = mean.shape[-1]
    cov = stacked @ np.swapaxes(stacked, -1, -2) + sigma_diag * error_structure(
        m // 2 + 1
    )

    var = np.diagonal(cov, axis1=-2, axis2=-1)
    if not np.all(np.isfinite(cov)):
        raise DegenerateVarianceException('Utility-difference covariance is not finite')
    if np.any(var <= 0):
        raise DegenerateVarianceException('Utility difference with zero variance')
    scale = np.sqrt(var)
    b = -mean / scale
    R = cov / (scale[..., :, None] * scale[..., None, :])
    diag = np.arange(m)
    R[..., diag, diag] = 1.0
    return b, R


def build_pair_moments(data, n, t, t2, theta, spec):
    """
    Reduce P(C_nt = y_nt, C_nt2 = y_nt2) to the moments of a (2K-2)-dimensional normal
    orthant probability.

    :param data: PanelDataset
    :param n: individual index
    :param t: first occasion (0-based)
    :param t2: second occasion, t < t2
    :param theta: Theta
    :param spec: ModelSpec
    :return: PairMoments
    """
    if not 0 <= t < t2 < data.n_occasions:
        raise ValueError(f'Need 0 <= t < t2 < {data.n_occasions}, got ({t}, {t2})')
    design = DifferencedDesign.from_dataset(data.subset([n]))
    design = DifferencedDesign(
        design.x_fixed, design.x_random, np.array([[t, t2]], dtype=np.intp)
    )
    beta, L = unpack(theta, spec)
    b, R = pair_moment_arrays(design, beta, L, spec.sigma_diag)
    return PairMoments(b[0, 0], R[0, 0])
