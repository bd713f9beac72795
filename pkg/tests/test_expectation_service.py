from fractions import Fraction

import numpy as np
import pytest

from core.exceptions import BudgetExceededError, ConfigurationError
from models import BidProfile, History, StochasticInstance
from services.allocation_service import (
    AntiThresholdRule,
    ConstantRule,
    ThresholdRule,
    UniformRandomRule,
    regret_stochastic,
    simulate,
)
from services.click_streams import RULE_STREAM, StochasticSource, make_rng
from services.expectation_service import (
    BRANCH_EXPLORE,
    BRANCH_TARGET,
    MixtureParams,
    MixtureRule,
    check_exploration_identity,
    check_truthful_in_expectation,
    click_sequences,
    expected_clicks_polynomial,
    history_probability_polynomial,
    history_probability_total,
    mixture_regret,
    mixture_regret_bound,
    monomial_payment,
    myerson_expected_payment_polynomial,
    regret_preserving_gamma,
    relevant_history_member,
    relevant_set_probability,
    verify_expected_clicks,
    verify_expected_payment,
)
from services.mechanism_service import EliminationRule, NaiveRule, Ucb1Rule
from services.polynomial import CtrPolynomial

MU0 = CtrPolynomial.variable(2, 0)


def test_click_sequences_enumerate_low_round_first():
    assert click_sequences(2).tolist() == [[0, 0], [1, 0], [0, 1], [1, 1]]


def test_history_probabilities_sum_to_one(exact_bids):
    assert history_probability_total(NaiveRule(2, 4, t0=1), exact_bids(2, 1)) == 1
    assert history_probability_total(ThresholdRule(2, 3), exact_bids(1, 1)) == 1


def test_history_probability(exact_bids):
    rule = ThresholdRule(2, 2)
    bids = exact_bids(2, 1)
    assert history_probability_polynomial(rule, bids, History.from_sequences([0, 0], [1, 0])) == MU0 - MU0 ** 2
    assert not history_probability_polynomial(rule, bids, History.from_sequences([1, 0], [1, 0]))
    with pytest.raises(ConfigurationError):
        history_probability_polynomial(rule, bids, History.from_sequences([0], [1]))


def test_expected_clicks_of_a_constant_rule(exact_bids):
    assert expected_clicks_polynomial(ConstantRule(2, 3, agent=1), exact_bids(1, 1), 1) == 3 * CtrPolynomial.variable(2, 1)
    assert not expected_clicks_polynomial(ConstantRule(2, 3, agent=1), exact_bids(1, 1), 0)


def test_expected_payment_of_the_threshold_rule(exact_bids):
    rule = ThresholdRule(2, 2)
    # γ·(3·2μ0 − (3 − 1)·2μ0) with γ = 1/2
    assert myerson_expected_payment_polynomial(rule, exact_bids(3, 1), 0, Fraction(1, 2)) == MU0
    assert not myerson_expected_payment_polynomial(rule, exact_bids(3, 1), 1, Fraction(1, 2))


def test_expected_payment_with_float_bids():
    rule = ThresholdRule(2, 2)
    payment = myerson_expected_payment_polynomial(rule, BidProfile((3.0, 1.0)), 0, 0.5)
    assert payment.coefficient((1, 0)) == pytest.approx(1.0, abs=1e-6)
    assert len(payment) == 1


def test_symbolic_budget(exact_bids, isolated_settings):
    isolated_settings.max_polynomial_kt = 4
    with pytest.raises(BudgetExceededError):
        history_probability_total(ThresholdRule(2, 3), exact_bids(1, 1))


def test_randomized_rules_have_no_polynomials(exact_bids):
    with pytest.raises(ConfigurationError):
        expected_clicks_polynomial(UniformRandomRule(2, 2), exact_bids(1, 1), 0)


def test_relevant_sets():
    history = History.from_sequences([0, 1, 1], [1, 1, 0])
    assert relevant_history_member((1, 1), 0, history)
    assert relevant_history_member((0, 0), 1, history)
    assert not relevant_history_member((0, 1), 0, history)
    assert 4 * relevant_set_probability((1, 1), 2, 3) == MU0 * CtrPolynomial.variable(2, 1)


def test_exploration_identity():
    assert check_exploration_identity(2, 2)
    assert check_exploration_identity(3, 1)


def test_monomial_payment():
    pmi = 2 * MU0 + 1
    history = History.from_sequences([0, 1], [1, 0])
    assert monomial_payment(history, 0, pmi, Fraction(1, 2), BRANCH_TARGET) == 0
    # (2·2 + 1) / (1 − γ)
    assert monomial_payment(history, 0, pmi, Fraction(1, 2), BRANCH_EXPLORE) == 10
    missed = History.from_sequences([0, 1], [0, 0])
    assert monomial_payment(missed, 0, pmi, Fraction(1, 2), BRANCH_EXPLORE) == 2
    with pytest.raises(ConfigurationError):
        monomial_payment(history, 0, pmi, Fraction(1, 2), "greedy")


def test_mixture_parameters():
    with pytest.raises(ConfigurationError):
        MixtureParams(1.0)
    assert regret_preserving_gamma(10) == pytest.approx(0.9)
    assert mixture_regret_bound(5.0, 0.9, 1.0, 10) == pytest.approx(5.5)


def test_mixture_rule_follows_the_target_on_its_branch():
    rule = MixtureRule(ConstantRule(2, 5, agent=1), MixtureParams(0.5))
    source = StochasticSource([0.5, 0.5], 5, 1, np.arange(1000))
    batch = simulate(rule, BidProfile((1.0, 1.0)), source, make_rng(1, RULE_STREAM, 0))
    target = ~rule.explore
    assert np.all(batch.agents[target] == 1)
    assert 0.4 < rule.explore.mean() < 0.6
    assert 0 < batch.agents[rule.explore].mean() < 1


def test_monomial_payments_match_the_polynomial_in_expectation(exact_bids):
    report = verify_expected_payment(ThresholdRule(2, 2), exact_bids(3, 1), 0.5, [0.5, 0.5], 20_000, seed=3)
    assert report
    assert report.agents[0].polynomial == pytest.approx(0.5)
    assert report.agents[1].polynomial == 0.0


def test_expected_clicks_match_simulation(exact_bids):
    report = verify_expected_clicks(NaiveRule(2, 4, t0=1), exact_bids(2, 1), [0.7, 0.4], 5_000, seed=9)
    assert report
    assert report.quantity == "clicks"


def test_truthful_in_expectation():
    half = Fraction(1, 2)
    report = check_truthful_in_expectation(NaiveRule(2, 3, t0=1), [1, 2], half, [half, Fraction(1, 3)])
    assert report
    assert len(report.deviations) == 2 * 2 * 2 * 1


def test_anti_monotone_rule_is_not_truthful_in_expectation():
    half = Fraction(1, 2)
    report = check_truthful_in_expectation(AntiThresholdRule(2, 1), [half, 1, 2], half, [half, half])
    assert not report
    assert any(d.agent == 0 and d.value == half and d.bid == 1 for d in report.violations)


@pytest.mark.parametrize("rule", [NaiveRule(2, 4, t0=1), Ucb1Rule(2, 4), EliminationRule(2, 4), ThresholdRule(2, 4)],
                         ids=lambda r: r.name)
def test_polynomials_never_exceed_degree_T(rule, exact_bids):
    bids = exact_bids(2, 1)
    assert history_probability_total(rule, bids).degree <= rule.T
    for i in range(2):
        assert expected_clicks_polynomial(rule, bids, i).degree <= rule.T
        assert myerson_expected_payment_polynomial(rule, bids, i, Fraction(1, 2)).degree <= rule.T


def test_mixture_regret_stays_under_its_bound():
    inst = StochasticInstance(k=2, T=50, ctrs=(0.9, 0.1), values=(1.0, 1.0), bids=BidProfile((1.0, 1.0)), v_max=1.0)
    target = ConstantRule(2, 50, agent=0)
    target_regret = regret_stochastic(target, inst, 400, seed=6)
    assert target_regret.mean == pytest.approx(0.0, abs=1e-9)
    measured = mixture_regret(target, inst, 0.5, 400, seed=6)
    bound = mixture_regret_bound(target_regret.mean, 0.5, 1.0, 50)
    assert measured.mean + 3 * measured.stderr <= bound
    # exploration rounds lose 0.4 per round on average
    assert measured.mean == pytest.approx(0.5 * 50 * 0.4, rel=0.2)
