from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from core.exceptions import ConfigurationError
from models import BidProfile, History, Realization, StochasticInstance
from services.allocation_service import (
    ConstantRule,
    ThresholdRule,
    TieBreakRule,
    UniformRandomRule,
    as_bid_matrix,
    click_allocation,
    first_argmax,
    regret_adversarial,
    regret_stochastic,
    run_allocation,
    simulate,
    stochastic_counts,
)
from services.click_streams import EnumeratedSource, make_rng
from services.mechanism_service import RULE_NAMES, NaiveRule, Ucb1Rule, get_rule
from tests.hypothesis_profiles import SIMULATION_SETTINGS


def instance(ctrs, values=None, T=100):
    values = tuple(values or [1.0] * len(ctrs))
    return StochasticInstance(k=len(ctrs), T=T, ctrs=tuple(ctrs), values=values, bids=BidProfile(values),
                              v_max=max(values))


def test_first_argmax_breaks_ties_to_lowest_index():
    assert first_argmax(np.array([[1, 3, 3], [2, 2, 1]])).tolist() == [1, 0]
    exact = np.array([[Fraction(1, 2), Fraction(1, 2)]], dtype=object)
    assert first_argmax(exact).tolist() == [0]


def test_as_bid_matrix_repeats_a_single_profile():
    matrix = as_bid_matrix(BidProfile((1.0, 2.0)), n_runs=3)
    assert matrix.shape == (3, 2)
    assert matrix[2, 1] == 2.0


def test_run_allocation_and_click_allocation(realization):
    rho = realization("1111", "0000")
    history = run_allocation(ThresholdRule(2, 4), BidProfile.parse("2,1"), rho)
    assert history.agents == (0, 0, 0, 0)
    allocation = click_allocation(history, 2)
    assert allocation.clicks == (4, 0)
    assert allocation.impressions == (4, 0)


def test_run_allocation_checks_dimensions(realization):
    with pytest.raises(ConfigurationError):
        run_allocation(ConstantRule(2, 3), BidProfile.parse("1,1"), realization("1111", "0000"))


def test_click_allocation_rejects_foreign_agents():
    with pytest.raises(ConfigurationError):
        click_allocation(History.from_sequences([0, 2], [1, 1]), 2)


def test_randomized_rule_needs_generator(realization):
    with pytest.raises(ConfigurationError):
        run_allocation(UniformRandomRule(2, 2), BidProfile.parse("1,1"), realization("11", "11"))
    history = run_allocation(UniformRandomRule(2, 2), BidProfile.parse("1,1"), realization("11", "11"),
                             rng=make_rng(0, 1))
    assert len(history) == 2


def test_next_replays_the_prefix():
    rule = TieBreakRule(2, 3)
    bids = BidProfile.parse("1,1")
    clicked = History.from_sequences([0, 0], [1, 1])
    missed = History.from_sequences([0, 1], [0, 0])
    assert rule.next(bids, clicked, 1) == 0
    assert rule.next(bids, missed, 1) == 1


def test_regret_of_a_constant_rule_is_exact():
    inst = instance([0.5, 0.75], T=200)
    estimate = regret_stochastic(ConstantRule(2, 200, agent=0), inst, trials=10, seed=1)
    assert estimate.mean == pytest.approx(50.0)
    assert estimate.stderr == 0.0
    assert regret_stochastic(ConstantRule(2, 200, agent=1), inst, trials=10, seed=1).mean == 0.0


def test_single_agent_regret_is_zero():
    inst = instance([0.4], T=50)
    mean, stderr = regret_stochastic(NaiveRule(1, 50), inst, trials=5, seed=0)
    assert (mean, stderr) == (0.0, 0.0)


def test_regret_checks_rule_matches_instance():
    with pytest.raises(ConfigurationError):
        regret_stochastic(ConstantRule(2, 10), instance([0.5, 0.5], T=20), trials=5, seed=0)


def test_stochastic_counts_independent_of_threads(isolated_settings):
    isolated_settings.trial_batch_size = 8
    inst = instance([0.6, 0.4], T=60)
    single = stochastic_counts(Ucb1Rule(2, 60), inst, trials=40, seed=5, threads=1)
    pooled = stochastic_counts(Ucb1Rule(2, 60), inst, trials=40, seed=5, threads=4)
    assert np.array_equal(single[0], pooled[0])
    assert np.array_equal(single[1], pooled[1])


def test_counts_are_reproducible_for_a_seed():
    inst = instance([0.6, 0.4], T=30)
    _, a = stochastic_counts(ConstantRule(2, 30, agent=0), inst, trials=12, seed=9)
    _, b = stochastic_counts(ConstantRule(2, 30, agent=0), inst, trials=12, seed=9)
    assert np.array_equal(a, b)


def test_regret_adversarial_against_best_fixed_agent():
    rho = Realization.from_text("1111\n0000")
    values = [1.0, 1.0]
    assert regret_adversarial(ConstantRule(2, 4, agent=1), BidProfile((1.0, 1.0)), values, rho) == 4.0
    assert regret_adversarial(ConstantRule(2, 4, agent=0), BidProfile((1.0, 1.0)), values, rho) == 0.0


@SIMULATION_SETTINGS
@given(ctrs=st.lists(st.floats(0.0, 1.0), min_size=2, max_size=4), seed=st.integers(0, 2 ** 32))
def test_stochastic_regret_is_never_negative(ctrs, seed):
    inst = instance(ctrs, T=40)
    estimate = regret_stochastic(Ucb1Rule(inst.k, 40), inst, 5, seed)
    assert estimate.mean >= -1e-9
    assert estimate.stderr >= 0.0


@pytest.mark.parametrize("name", RULE_NAMES)
def test_a_click_never_changes_earlier_rounds(name):
    k, T = 2, 6
    rule = get_rule(name, k, T)
    bids = np.array([0.7, 0.4])
    indices = np.arange(1 << (k * T), dtype=np.int64)
    base = simulate(rule.spawn(), bids, EnumeratedSource(k, T, indices), make_rng(5, 1)).agents
    for position in range(k * T):
        t = position % T
        flipped = simulate(rule.spawn(), bids, EnumeratedSource(k, T, indices ^ (1 << position)),
                           make_rng(5, 1)).agents
        assert np.array_equal(flipped[:, : t + 1], base[:, : t + 1]), (name, position)
