#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from macml.lib.averaging import (
    CandidateSet,
    Focus,
    FocusKind,
    average_estimates,
    build_problem,
    ic_weights,
    solve_weights,
)
from macml.lib.errors import ContextMismatchException, SpecificationException
from macml.lib.estimation import godambe
from macml.model.spec import ModelSpec, omega_pattern

from .helpers.constants import CASE_STUDY_WEIGHTS

RHO = 0.6


@pytest.fixture
def two_specs():
    wide = ModelSpec(
        1, 1, omega_pattern(1), gamma_indices=(0,), gamma0=(0.0,), name='wide'
    )
    return wide, wide.with_pinned('all', name='narrow')


@pytest.fixture
def two_candidates(two_specs, make_fit):
    wide, narrow = two_specs
    fits = (
        make_fit([0.2, 1.1], n=400, name='wide'),
        make_fit([0.0, 1.3], n=400, restriction=((0,), (0.0,)), name='narrow'),
    )
    return CandidateSet(two_specs, fits)


def _kkt_weights(F):
    M = F.shape[0]
    system = np.zeros((M + 1, M + 1))
    system[:M, :M] = 2 * F
    system[:M, M] = 1
    system[M, :M] = 1
    rhs = np.zeros(M + 1)
    rhs[M] = 1
    return np.linalg.solve(system, rhs)[:M]


class TestIcWeights:
    def test_normalised_and_ordered(self):
        weights = ic_weights([1002.0, 1000.0, 1010.0])
        assert weights.sum() == pytest.approx(1.0)
        assert weights[1] > weights[0] > weights[2]
        assert weights[0] / weights[1] == pytest.approx(np.exp(-1.0))

    def test_equal_criteria(self):
        assert np.allclose(ic_weights([5.0, 5.0]), 0.5)

    def test_large_criteria_do_not_underflow(self):
        weights = ic_weights([1e6, 1e6 + 1])
        assert np.all(np.isfinite(weights))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            ic_weights([1.0, np.inf])


class TestSolveWeights:
    def test_matches_constrained_minimiser(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(4, 4))
        F = X @ X.T + 0.1 * np.eye(4)
        weights = solve_weights(F)
        found = minimize(
            lambda w: w @ F @ w,
            np.full(4, 0.25),
            constraints=[{'type': 'eq', 'fun': lambda w: w.sum() - 1}],
            method='SLSQP',
            options={'ftol': 1e-14},
        )
        assert np.allclose(weights, found.x, atol=1e-5)

    def test_weights_may_be_negative(self):
        F = np.array([[1.0, 1.2], [1.2, 2.0]])
        weights = solve_weights(F)
        assert weights[1] < 0
        assert weights.sum() == pytest.approx(1.0)

    def test_zero_matrix_falls_back(self, caplog):
        with caplog.at_level(logging.WARNING):
            weights = solve_weights(np.zeros((3, 3)))
        assert np.allclose(weights, 1 / 3)
        assert 'equal weights' in caplog.text

    def test_published_case_study_sums_to_one(self):
        assert sum(CASE_STUDY_WEIGHTS) == pytest.approx(1.0, abs=1e-4)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), size=st.integers(1, 6))
def test_closed_form_weights(seed, size):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(size, size))
    F = X @ X.T + 0.05 * np.eye(size)
    weights = solve_weights(F)
    assert abs(weights.sum() - 1) <= 1e-12
    assert np.allclose(weights, _kkt_weights(F), atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), size=st.integers(2, 6))
def test_weights_follow_a_reordering_of_the_candidates(seed, size):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(size, size))
    F = X @ X.T + 0.05 * np.eye(size)
    order = rng.permutation(size)
    reordered = solve_weights(F[np.ix_(order, order)])
    assert np.allclose(reordered, solve_weights(F)[order], atol=1e-10)


class TestFocus:
    def test_parse(self, two_specs):
        wide, _ = two_specs
        assert Focus.parse('coordinate:L_11', wide).index == 1
        linear = Focus.parse('linear:beta_1=2,L_11=-1', wide)
        assert linear.coefficients.tolist() == [2.0, -1.0]
        assert Focus.parse('set:beta_1,L_11', wide).indices == (0, 1)
        pair = Focus.parse('pair:1,1,2', wide)
        assert pair.kind is FocusKind.PAIR_PROBABILITY
        assert pair.pair == (0, 0, 1)

    @pytest.mark.parametrize('text', ['coordinate:', 'pair:1,2', 'median:beta_1'])
    def test_parse_errors(self, two_specs, text):
        with pytest.raises(SpecificationException):
            Focus.parse(text, two_specs[0])

    def test_values_and_gradients(self):
        theta = np.array([1.0, 2.0, 3.0])
        assert Focus.coordinate(2).value(theta) == 3.0
        assert Focus.linear([1, -1, 0]).value(theta) == -1.0
        assert Focus.coord_set([0, 2]).value(theta).tolist() == [1.0, 3.0]
        assert len(Focus.coord_set([0, 2]).gradients(theta)) == 2
        assert Focus.linear([1, -1, 0]).gradients(theta)[0].tolist() == [1, -1, 0]

    def test_pair_focus_needs_a_likelihood(self):
        with pytest.raises(SpecificationException):
            Focus.pair_probability(0, 0, 1).value(np.zeros(2))


class TestCandidateSet:
    def test_wide_model_found(self, two_candidates):
        assert two_candidates.wide_index == 0
        assert two_candidates.names == ('wide', 'narrow')
        assert len(two_candidates) == 2

    def test_needs_a_wide_model(self, two_specs, make_fit):
        _, narrow = two_specs
        with pytest.raises(SpecificationException):
            CandidateSet((narrow,), (make_fit([0.0, 1.0]),))

    def test_pinned_value_away_from_gamma0(self, two_specs, make_fit):
        fits = (make_fit([0.2, 1.1]), make_fit([0.1, 1.3]))
        with pytest.raises(SpecificationException):
            CandidateSet(two_specs, fits)

    def test_different_contexts(self, two_specs, make_fit):
        fits = (make_fit([0.2, 1.1]), make_fit([0.0, 1.3], context={'data': 'x'}))
        with pytest.raises(ContextMismatchException):
            CandidateSet(two_specs, fits)


class TestBuildProblem:
    def test_two_model_mse_matrix(self, two_candidates):
        H = np.array([[1.0, RHO], [RHO, 1.0]])
        problem = build_problem(two_candidates, Focus.coordinate(1), godambe(H, H))
        delta = np.sqrt(400) * 0.2
        expected = np.array(
            [[1 / (1 - RHO**2), 1.0], [1.0, RHO**2 * delta**2 + 1.0]]
        )
        assert problem.delta_hat.tolist() == pytest.approx([delta])
        assert np.allclose(problem.F, expected)
        assert np.allclose(problem.lambda_bias[0], [0.0, RHO])
        assert np.allclose(problem.weights, _kkt_weights(expected))
        assert problem.rank_F == 2
        assert problem.flagged == ()

    def test_wide_model_alone(self, two_specs, make_fit):
        candidates = CandidateSet(two_specs[:1], (make_fit([0.2, 1.1]),))
        problem = build_problem(
            candidates, Focus.coordinate(1), godambe(np.eye(2), np.eye(2))
        )
        assert problem.weights.tolist() == [1.0]

    def test_singular_projection_flagged(self, two_candidates, caplog):
        H = np.array([[1.0, 0.0], [0.0, 0.0]])
        J = np.eye(2)
        with caplog.at_level(logging.WARNING):
            problem = build_problem(two_candidates, Focus.coordinate(0), godambe(H, J))
        assert problem.flagged == (0, 1)
        assert np.all(np.isfinite(problem.weights))

    def test_on_fitted_models(self, varsel_fits):
        f = varsel_fits
        candidates = CandidateSet((f.wide, f.narrow), (f.fit_u, f.fit_r))
        for focus in (Focus.coordinate(2), Focus.pair_probability(0, 0, 1)):
            problem = build_problem(candidates, focus, f.god_u, f.likelihood)
            assert problem.weights.sum() == pytest.approx(1.0)
            assert problem.min_eigenvalue_F > -1e-8 * np.abs(problem.F).max()


class TestAverageEstimates:
    def test_weighted_average(self, two_candidates):
        averaged = average_estimates(
            two_candidates, [0.25, 0.75], focus=Focus.coordinate(1)
        )
        assert np.allclose(averaged.theta.values, [0.05, 1.25])
        assert averaged.focus_value == pytest.approx(1.25)

    def test_set_focus_is_averaged_per_coordinate(self, two_candidates):
        averaged = average_estimates(
            two_candidates, [0.5, 0.5], focus=Focus.coord_set([0, 1])
        )
        assert np.allclose(averaged.focus_value, [0.1, 1.2])

    @pytest.mark.parametrize('mix', [0.0, 0.3, 1.7])
    def test_linear_in_the_weights(self, two_candidates, mix):
        first, second = np.array([0.9, 0.1]), np.array([-0.2, 1.2])
        focus = Focus.linear([2.0, -1.0])

        def _average(weights):
            return average_estimates(two_candidates, weights, focus=focus)

        mixed = _average(mix * first + (1 - mix) * second)
        one, two = _average(first), _average(second)
        assert np.allclose(
            mixed.theta.values,
            mix * one.theta.values + (1 - mix) * two.theta.values,
            atol=1e-12,
        )
        assert mixed.focus_value == pytest.approx(
            mix * one.focus_value + (1 - mix) * two.focus_value, abs=1e-12
        )
        # a linear focus commutes with averaging
        assert mixed.focus_value == pytest.approx(focus.value(mixed.theta), abs=1e-12)

    def test_weight_count(self, two_candidates):
        with pytest.raises(SpecificationException):
            average_estimates(two_candidates, [1.0])
