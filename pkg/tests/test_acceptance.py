"""Desk-scale runs of the headline results; minutes each, so marked slow."""
import dataclasses

import numpy as np
import pytest

from models import BidProfile
from services.click_streams import StochasticSource
from services.expectation_service import verify_expected_payment
from services.instance_service import make_delta_gap_instance
from services.mechanism_service import EliminationRule, get_mechanism
from services.experiment_service import SweepSpec, delta_gap_sweep, regret_scaling_sweep, ucb1_underbid_experiment
from services.verify_service import (
    EnumerationBudget,
    build_allocation_table,
    check_exploration_separated,
    check_monotone_in_expectation_mc,
    check_normalized,
    check_pointwise_monotone,
    check_truthful_exhaustive,
    check_weakly_separated,
    check_weakly_truthful_mc,
)

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("T", [2, 3, 4, 5, 6])
def test_naive_is_truthful_and_normalized_on_every_realization(T):
    mechanism = get_mechanism("naive")
    budget = EnumerationBudget.parse(2, "1,2,3,4")
    table = build_allocation_table(mechanism.rule(2, T), budget, mechanism=mechanism, threads=4)
    assert check_truthful_exhaustive(mechanism, 2, T, budget, table)
    assert check_normalized(mechanism, 2, T, budget, table)


@pytest.mark.parametrize("T", [3, 4])
def test_characterization_verdicts(T):
    budget = EnumerationBudget.default(2)
    naive = get_mechanism("naive").rule(2, T)
    table = build_allocation_table(naive, budget)
    assert check_pointwise_monotone(naive, budget, table)
    assert check_exploration_separated(naive, budget, table)
    assert check_weakly_separated(naive, budget, table)

    ucb1 = get_mechanism("ucb1").rule(2, T)
    table = build_allocation_table(ucb1, budget)
    assert check_exploration_separated(ucb1, budget, table).counterexample is not None
    assert check_weakly_separated(ucb1, budget, table).counterexample is not None


def test_regret_exponents_separate():
    spec = SweepSpec(rules=["naive", "ucb1"], T_values=[1000, 3000, 10_000, 30_000, 100_000], trials=200, seed=2024,
                     threads=4)
    _, fits = regret_scaling_sweep(spec)
    assert 0.58 <= fits["naive"].exponent <= 0.78
    assert fits["ucb1"].exponent <= 0.55
    assert fits["naive"].exponent - fits["ucb1"].exponent >= 0.08


def test_delta_gap_growth_ratios():
    spec = SweepSpec(rules=["naive", "ucb1", "elimination"], family="delta-gap", T_values=[1000, 4000, 16_000],
                     trials=200, seed=99, elimination_schedule="confidence", threads=4)
    _, ratios = delta_gap_sweep(spec)
    by_rule = {}
    for r in ratios:
        by_rule.setdefault(r.rule, []).append(r)
    for r in by_rule["naive"]:
        assert 2.0 <= r.ratio <= 3.1
    for r in by_rule["ucb1"]:
        assert r.ratio <= 1.6
    for r in by_rule["elimination"]:
        assert r.ratio <= 1.8


def test_elimination_is_monotone_in_expectation():
    instance = dataclasses.replace(make_delta_gap_instance(0.25, 2, 1.0, 2000), bids=BidProfile((0.5, 0.5)))
    grid = [0.1 * n for n in range(1, 11)]
    report = check_monotone_in_expectation_mc(EliminationRule(2, 2000), instance, 0, grid, 500, seed=8, threads=4)
    assert report


def test_ucb1_rewards_underbidding():
    report = ucb1_underbid_experiment([0.75, 0.5], [1.0, 1.0], 2000, [0.5, 0.6, 0.7, 0.8, 0.9, 1.0], 2000, seed=5,
                                      threads=4)
    assert report.best_shading < 1
    assert report.significant


def test_psim_is_weakly_truthful():
    source = StochasticSource([0.6, 0.4], 100, 17, np.arange(5))
    realizations = [source.realization(r) for r in range(5)]
    report = check_weakly_truthful_mc(get_mechanism("psim"), 2, 100, [0.2, 0.4, 0.6, 0.8, 1.0], realizations,
                                      seeds=2000, seed=23)
    assert len(report.estimates) == 2 * 5 * 5 * 4 * 5
    assert report.passed, report.flagged[:5]


def test_monomial_payments_match_the_payment_polynomial():
    rule = get_mechanism("elimination").rule(2, 3)
    rng = np.random.default_rng(31)
    for n, mu in enumerate(rng.uniform(0.1, 0.9, size=(3, 2))):
        report = verify_expected_payment(rule, BidProfile.parse("1,1/2"), 0.5, list(mu), 100_000, seed=40 + n)
        assert report.passed, report.agents
