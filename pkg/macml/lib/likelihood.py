#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from ..model.moments import DifferencedDesign, pair_moment_arrays
from ..model.spec import Theta, unpack
from .errors import NumericalException, SpecificationException
from .gauss import PermutationMode, SJConfig, sj_mvncdf_batch
from .helpers import fingerprint_arrays

log = logging.getLogger(__name__)

FD_STEP = np.sqrt(np.finfo(float).eps)


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """
    Scores of the pairwise composite log-likelihood.

    ``per_pair`` is (N, P, d), ``per_individual`` (N, d) and ``total`` (d,).
    """

    per_pair: np.ndarray
    per_individual: np.ndarray
    total: np.ndarray

    @classmethod
    def from_pair_scores(cls, per_pair):
        per_individual = per_pair.sum(axis=1)
        return cls(per_pair, per_individual, per_individual.sum(axis=0))

    @property
    def n_individuals(self):
        return self.per_individual.shape[0]

    @property
    def mean(self):
        return self.total / self.n_individuals


def _chunk_logliks(design, orderings, beta, L, sigma_diag, eps):
    b, R = pair_moment_arrays(design, beta, L, sigma_diag)
    n, n_pairs, m = b.shape
    if orderings.ndim == 4:
        orderings = orderings.reshape(n * n_pairs, *orderings.shape[2:])
    probs = sj_mvncdf_batch(
        b.reshape(-1, m), R.reshape(-1, m, m), orderings, clamp_epsilon=eps
    )
    return np.log(np.maximum(probs, eps)).reshape(n, n_pairs)


def _individual_key(data, n):
    return int(
        fingerprint_arrays(data.choices[n], data.x_fixed[n], data.x_random[n]), 16
    )


class CompositeLikelihood:
    """
    Evaluation context for the pairwise composite marginal log-likelihood of a dataset.

    The SJ coordinate orderings are assigned once, per (individual, t, t2) and the run
    seed. An individual is keyed by a hash of its own rows, not its position, so the
    approximation of its pair terms survives relabelling and subsetting of the panel.
    """

    def __init__(self, data, spec, sj_cfg=None, seed=0, n_jobs=1, gradient=None):
        """
        :param data: PanelDataset
        :param spec: ModelSpec
        :param sj_cfg: SJConfig
        :param seed: run-level seed of the ordering assignment
        :param n_jobs: joblib workers used to evaluate chunks of individuals
        :param gradient: optional callable theta values -> (N, P, d) analytic pair
            scores, used instead of finite differences
        """
        if spec.p_beta != data.p_beta or spec.p_alpha != data.p_alpha:
            raise SpecificationException(
                f'Model {spec.name} expects {spec.p_beta} fixed and {spec.p_alpha} '
                f'random covariates, the data has {data.p_beta} and {data.p_alpha}'
            )
        self.data = data
        self.spec = spec
        self.sj_cfg = sj_cfg or SJConfig()
        self.seed = int(seed)
        self.n_jobs = n_jobs
        self.gradient = gradient
        self.design = DifferencedDesign.from_dataset(data)
        self.orderings = self._assign_orderings()

    @property
    def dim(self):
        return 2 * (self.data.n_alternatives - 1)

    @property
    def context(self):
        """
        What two fits must share for their likelihoods to be comparable.
        """
        return {
            'data': self.data.fingerprint,
            'seed': self.seed,
            'mode': self.sj_cfg.mode.value,
            'n_permutations': self.sj_cfg.n_permutations,
        }

    def _assign_orderings(self):
        if self.sj_cfg.mode is not PermutationMode.FIXED_RANDOM:
            return self.sj_cfg.orderings_for(self.dim)
        n_pairs = self.design.n_pairs
        orderings = np.empty(
            (self.data.n_individuals, n_pairs, self.sj_cfg.n_permutations, self.dim),
            dtype=np.intp,
        )
        for n in range(self.data.n_individuals):
            key = _individual_key(self.data, n)
            for p, (t, t2) in enumerate(self.design.pairs):
                rng = np.random.default_rng([self.seed, key, int(t), int(t2)])
                orderings[n, p] = self.sj_cfg.orderings_for(self.dim, rng)
        return orderings

    def _values(self, theta):
        values = theta.values if isinstance(theta, Theta) else np.asarray(theta, float)
        if values.size != self.spec.d:
            raise SpecificationException(
                f'Expected {self.spec.d} parameters, got {values.size}'
            )
        return values

    def _orderings_of(self, individuals):
        if self.orderings.ndim == 4:
            return self.orderings[individuals]
        return self.orderings

    def pair_logliks(self, theta):
        """
        Log pair probabilities of every individual and occasion pair.

        :param theta: Theta or parameter array
        :return: (N, P) array
        """
        beta, L = unpack(self._values(theta), self.spec)
        args = (beta, L, self.spec.sigma_diag, self.sj_cfg.clamp_epsilon)
        n = self.data.n_individuals
        if self.n_jobs == 1 or n < 2:
            return _chunk_logliks(self.design, self.orderings, *args)
        chunks = np.array_split(np.arange(n), min(n, abs(self.n_jobs) * 4))
        parts = Parallel(n_jobs=self.n_jobs)(
            delayed(_chunk_logliks)(
                self.design.subset(chunk), self._orderings_of(chunk), *args
            )
            for chunk in chunks
        )
        return np.concatenate(parts, axis=0)

    def pair_loglik(self, n, t, t2, theta):
        """
        Log of the approximated probability of individual n's choices on occasions t and
        t2.
        """
        matches = np.flatnonzero(
            (self.design.pairs[:, 0] == t) & (self.design.pairs[:, 1] == t2)
        )
        if matches.size == 0:
            raise ValueError(f'({t}, {t2}) is not an occasion pair with t < t2')
        beta, L = unpack(self._values(theta), self.spec)
        design = DifferencedDesign(
            self.design.x_fixed[[n]],
            self.design.x_random[[n]],
            self.design.pairs[matches],
        )
        orderings = self._orderings_of([n])
        if orderings.ndim == 4:
            orderings = orderings[:, matches]
        return float(
            _chunk_logliks(
                design,
                orderings,
                beta,
                L,
                self.spec.sigma_diag,
                self.sj_cfg.clamp_epsilon,
            )[0, 0]
        )

    def lcml(self, theta):
        """
        Pairwise composite log-likelihood, summed per individual then over individuals.
        """
        return float(self.pair_logliks(theta).sum(axis=1).sum())

    def score(self, theta, indices=None):
        """
        Composite scores by central finite differences, with orderings held fixed.

        :param theta: Theta or parameter array
        :param indices: coordinates to differentiate (default all); the others are zero
        :return: ScoreSet
        """
        values = self._values(theta)
        if self.gradient is not None:
            per_pair = np.asarray(self.gradient(values), dtype=float)
            return ScoreSet.from_pair_scores(per_pair)

        indices = range(values.size) if indices is None else indices
        per_pair = np.zeros(
            (self.data.n_individuals, self.design.n_pairs, values.size)
        )
        for i in indices:
            h = FD_STEP * max(1.0, abs(values[i]))
            up, down = values.copy(), values.copy()
            up[i] += h
            down[i] -= h
            f_up = self.pair_logliks(up)
            f_down = self.pair_logliks(down)
            if not (np.all(np.isfinite(f_up)) and np.all(np.isfinite(f_down))):
                raise NumericalException(
                    'Non-finite likelihood in the score stencil of '
                    f'{self.spec.layout[i]}'
                )
            per_pair[:, :, i] = (f_up - f_down) / (up[i] - down[i])
        return ScoreSet.from_pair_scores(per_pair)


def pair_loglik(data, n, t, t2, theta, spec, sj_cfg=None, seed=0):
    """
    Log approximated probability of the observed choices of individual n on occasions t
    and t2.
    """
    return CompositeLikelihood(data, spec, sj_cfg, seed).pair_loglik(n, t, t2, theta)


def lcml(data, theta, spec, sj_cfg=None, seed=0, n_jobs=1):
    """
    Pairwise composite marginal log-likelihood of a dataset.
    """
    return CompositeLikelihood(data, spec, sj_cfg, seed, n_jobs).lcml(theta)


def score(data, theta, spec, sj_cfg=None, seed=0, n_jobs=1):
    """
    Per-pair, per-individual and total composite scores.
    """
    return CompositeLikelihood(data, spec, sj_cfg, seed, n_jobs).score(theta)
