#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

from unittest.mock import MagicMock

import numpy as np
import pytest

from macml.lib import likelihood as likelihood_module
from macml.lib.dgp import (
    DgpConfig,
    simulate_dataset,
    true_beta,
    true_omega,
    true_theta,
    wide_spec,
)
from macml.lib.errors import SpecificationException
from macml.lib.gauss import SJConfig, bvn_cdf
from macml.lib.likelihood import CompositeLikelihood, ScoreSet
from macml.model.data import PanelDataset
from macml.model.moments import build_pair_moments
from macml.model.spec import ModelSpec, omega_pattern


def _relabel(data, perm):
    """
    The same panel with alternative j renamed perm[j] -> j.
    """
    inverse = np.argsort(perm)
    return PanelDataset(
        inverse[data.choices],
        data.x_fixed[:, :, perm],
        data.x_random[:, :, perm],
    )


class TestCompositeLikelihood:
    def test_lcml_is_sum_of_pair_logliks(self, small_data, small_dgp, small_spec):
        theta = true_theta(small_dgp, small_spec)
        lik = CompositeLikelihood(small_data, small_spec, seed=4)
        total = sum(
            lik.pair_loglik(n, t, t2, theta)
            for n in range(small_data.n_individuals)
            for t, t2 in lik.design.pairs
        )
        assert lik.lcml(theta) == pytest.approx(total, rel=1e-12)

    def test_additive_over_individuals(
        self, small_data, small_dgp, small_spec, all_orderings
    ):
        theta = true_theta(small_dgp, small_spec)
        first, rest = np.arange(12), np.arange(12, small_data.n_individuals)
        whole = CompositeLikelihood(small_data, small_spec, all_orderings).lcml(theta)
        parts = sum(
            CompositeLikelihood(
                small_data.subset(group), small_spec, all_orderings
            ).lcml(theta)
            for group in (first, rest)
        )
        assert whole == pytest.approx(parts, rel=1e-12)

    def test_alternative_labels_do_not_matter(
        self, small_data, small_dgp, small_spec, all_orderings
    ):
        theta = true_theta(small_dgp, small_spec)
        relabelled = _relabel(small_data, np.array([2, 0, 1]))
        original = CompositeLikelihood(small_data, small_spec, all_orderings)
        permuted = CompositeLikelihood(relabelled, small_spec, all_orderings)
        assert permuted.lcml(theta) == pytest.approx(original.lcml(theta), rel=1e-10)

    def test_orderings_are_reproducible(self, small_data, small_dgp, small_spec):
        theta = true_theta(small_dgp, small_spec)
        cfg = SJConfig(n_permutations=2)
        one = CompositeLikelihood(small_data, small_spec, cfg, seed=21)
        two = CompositeLikelihood(small_data, small_spec, cfg, seed=21)
        other = CompositeLikelihood(small_data, small_spec, cfg, seed=22)
        assert np.array_equal(one.orderings, two.orderings)
        assert one.lcml(theta) == two.lcml(theta)
        assert not np.array_equal(one.orderings, other.orderings)
        assert one.context == two.context != other.context

    def test_random_orderings_follow_the_individual(
        self, small_data, small_dgp, small_spec
    ):
        theta = true_theta(small_dgp, small_spec)
        cfg = SJConfig(n_permutations=2)
        whole = CompositeLikelihood(small_data, small_spec, cfg, seed=8)
        order = np.random.default_rng(1).permutation(small_data.n_individuals)
        shuffled = CompositeLikelihood(small_data.subset(order), small_spec, cfg, seed=8)
        assert np.array_equal(shuffled.orderings, whole.orderings[order])
        assert np.allclose(
            shuffled.pair_logliks(theta), whole.pair_logliks(theta)[order], rtol=1e-12
        )
        some = order[:10]
        part = CompositeLikelihood(small_data.subset(some), small_spec, cfg, seed=8)
        assert part.lcml(theta) == pytest.approx(
            whole.pair_logliks(theta)[some].sum(), rel=1e-12
        )

    def test_binary_pair_is_a_bivariate_normal(self):
        cfg = DgpConfig(
            family='generic',
            n_individuals=4,
            n_occasions=3,
            n_alternatives=2,
            n_covariates=2,
            beta=0.7,
            seed=19,
        )
        data = simulate_dataset(cfg)
        spec = wide_spec(cfg)
        theta = true_theta(cfg, spec)
        lik = CompositeLikelihood(data, spec)
        for n in range(data.n_individuals):
            for t, t2 in lik.design.pairs:
                moments = build_pair_moments(data, n, int(t), int(t2), theta, spec)
                exact = np.log(bvn_cdf(moments.b[0], moments.b[1], moments.R[0, 1]))
                assert lik.pair_loglik(n, t, t2, theta) == pytest.approx(
                    exact, abs=1e-10
                )

    def test_wrong_parameter_count(self, small_data, small_spec):
        lik = CompositeLikelihood(small_data, small_spec)
        with pytest.raises(SpecificationException):
            lik.lcml(np.zeros(small_spec.d + 1))

    def test_spec_does_not_fit_data(self, small_data):
        spec = ModelSpec(3, 1, omega_pattern(1))
        with pytest.raises(SpecificationException):
            CompositeLikelihood(small_data, spec)

    def test_unknown_pair(self, small_data, small_dgp, small_spec):
        lik = CompositeLikelihood(small_data, small_spec)
        with pytest.raises(ValueError):
            lik.pair_loglik(0, 2, 1, true_theta(small_dgp, small_spec))

    def test_workers_agree(self, small_data, small_dgp, small_spec):
        theta = true_theta(small_dgp, small_spec)
        serial = CompositeLikelihood(small_data, small_spec, seed=5)
        parallel = CompositeLikelihood(small_data, small_spec, seed=5, n_jobs=2)
        assert np.allclose(
            serial.pair_logliks(theta), parallel.pair_logliks(theta), rtol=1e-12
        )

    def test_module_functions(self, small_data, small_dgp, small_spec):
        theta = true_theta(small_dgp, small_spec)
        lik = CompositeLikelihood(small_data, small_spec, seed=2)
        assert likelihood_module.lcml(small_data, theta, small_spec, seed=2) == (
            lik.lcml(theta)
        )
        assert likelihood_module.pair_loglik(
            small_data, 3, 0, 2, theta, small_spec, seed=2
        ) == pytest.approx(lik.pair_loglik(3, 0, 2, theta))


class TestScores:
    def test_score_matches_fourth_order_stencil(self):
        cfg = DgpConfig(
            family='generic',
            n_individuals=50,
            n_occasions=3,
            n_alternatives=3,
            n_covariates=2,
            beta=0.5,
            seed=29,
        )
        data = simulate_dataset(cfg)
        spec = wide_spec(cfg)
        lik = CompositeLikelihood(data, spec, seed=6)
        truth = true_theta(cfg, spec).values
        rng = np.random.default_rng(17)
        h = 1e-3
        for _ in range(10):
            theta = truth + rng.uniform(-0.3, 0.3, size=spec.d)
            scores = lik.score(theta).total
            reference = np.empty(spec.d)
            for i in range(spec.d):
                step = np.zeros(spec.d)
                step[i] = h
                reference[i] = (
                    lik.lcml(theta - 2 * step)
                    - 8 * lik.lcml(theta - step)
                    + 8 * lik.lcml(theta + step)
                    - lik.lcml(theta + 2 * step)
                ) / (12 * h)
            error = np.abs(scores - reference).max()
            assert error <= 1e-5 * max(1.0, np.abs(reference).max())

    def test_score_levels(self, small_data, small_dgp, small_spec):
        theta = true_theta(small_dgp, small_spec)
        scores = CompositeLikelihood(small_data, small_spec).score(theta)
        n, pairs, d = scores.per_pair.shape
        assert (n, pairs, d) == (small_data.n_individuals, 3, small_spec.d)
        assert np.allclose(scores.per_individual, scores.per_pair.sum(axis=1))
        assert np.allclose(scores.total, scores.per_individual.sum(axis=0))
        assert np.allclose(scores.mean * n, scores.total)

    def test_selected_coordinates_only(self, small_data, small_dgp, small_spec):
        theta = true_theta(small_dgp, small_spec)
        scores = CompositeLikelihood(small_data, small_spec).score(theta, indices=[1])
        assert not scores.total[[0, 2, 3]].any()
        assert scores.total[1] != 0

    def test_analytic_gradient_is_used(self, small_data, small_dgp, small_spec):
        per_pair = np.ones((small_data.n_individuals, 3, small_spec.d))
        gradient = MagicMock(return_value=per_pair)
        lik = CompositeLikelihood(small_data, small_spec, gradient=gradient)
        scores = lik.score(true_theta(small_dgp, small_spec))
        gradient.assert_called_once()
        assert np.allclose(scores.total, small_data.n_individuals * 3)

    def test_from_pair_scores(self):
        per_pair = np.arange(12, dtype=float).reshape(2, 3, 2)
        scores = ScoreSet.from_pair_scores(per_pair)
        assert scores.per_individual.tolist() == [[6.0, 9.0], [24.0, 27.0]]
        assert scores.total.tolist() == [30.0, 36.0]


def test_pair_probability_matches_simulated_frequency(all_orderings):
    cfg = DgpConfig(
        family='generic',
        n_individuals=1,
        n_occasions=2,
        n_alternatives=3,
        n_covariates=2,
        beta=-0.5,
        seed=13,
    )
    data = simulate_dataset(cfg)
    x = data.x_fixed[0]
    rng = np.random.default_rng(99)
    draws = 200_000
    L = np.linalg.cholesky(true_omega(cfg))
    coefficients = true_beta(cfg) + rng.standard_normal((draws, 2)) @ L.T
    utility = np.einsum('tkp,dp->dtk', x, coefficients)
    utility += np.sqrt(cfg.sigma_diag) * rng.standard_normal(utility.shape)
    chosen = utility.argmax(axis=2)
    counts = np.zeros((3, 3))
    np.add.at(counts, (chosen[:, 0], chosen[:, 1]), 1)
    first, second = np.unravel_index(counts.argmax(), counts.shape)
    frequency = counts[first, second] / draws

    observed = PanelDataset([[first, second]], data.x_fixed, data.x_random)
    spec = ModelSpec(2, 2, omega_pattern(2))
    lik = CompositeLikelihood(observed, spec, all_orderings)
    prob = np.exp(lik.pair_loglik(0, 0, 1, true_theta(cfg, spec)))
    se = np.sqrt(frequency * (1 - frequency) / draws)
    assert prob == pytest.approx(frequency, abs=0.01 + 4 * se)
