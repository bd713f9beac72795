import math

import pytest

from core.exceptions import ConfigurationError, InstanceError
from services.instance_service import (
    delta_gap_of,
    lower_bound_epsilon,
    lower_bound_family,
    make_delta_gap_hard_instance,
    make_delta_gap_instance,
    make_lower_bound_instance,
)


def test_lower_bound_family_has_both_kinds_per_agent():
    family = lower_bound_family(3, 1000)
    assert [inst.label for inst in family] == ["I_0", "I_1", "I_2", "J_0", "J_1", "J_2"]


def test_lower_bound_i_instance_favours_one_agent():
    inst = make_lower_bound_instance("I", 1, 2, 1000, v_max=2.0)
    eps = lower_bound_epsilon(2, 1000)
    assert inst.ctrs == pytest.approx((0.5, 0.5 + eps))
    assert inst.values == (2.0, 2.0)
    assert inst.best_agent == 1


def test_lower_bound_j_instance_halves_other_bids():
    inst = make_lower_bound_instance("J", 0, 3, 1000)
    assert inst.ctrs == (0.5, 0.5, 0.5)
    assert inst.values == (1.0, 0.5, 0.5)


def test_lower_bound_rejects_large_epsilon():
    # k=2, T=8: ε = 2^(1/3) / 2 ≈ 0.63
    assert lower_bound_epsilon(2, 8) > 0.5
    with pytest.raises(InstanceError):
        make_lower_bound_instance("I", 0, 2, 8)


def test_lower_bound_rejects_bad_arguments():
    with pytest.raises(ConfigurationError):
        make_lower_bound_instance("K", 0, 2, 1000)
    with pytest.raises(ConfigurationError):
        make_lower_bound_instance("I", 2, 2, 1000)


@pytest.mark.parametrize("delta", [0.0, -0.1, 0.3])
def test_delta_outside_range_is_rejected(delta):
    with pytest.raises(InstanceError):
        make_delta_gap_instance(delta, 2)
    with pytest.raises(InstanceError):
        make_delta_gap_hard_instance(delta, 1.0, 3, 10_000)


def test_delta_gap_instance_has_the_requested_gap():
    inst = make_delta_gap_instance(0.1, 4, v_max=1.0, T=500)
    assert inst.best_agent == 0
    assert delta_gap_of(inst) == pytest.approx(0.1)


def test_hard_delta_gap_instance_puts_agent_one_ahead():
    inst = make_delta_gap_hard_instance(0.2, 1.0, 3, 10_000, v_max=2.0)
    assert inst.best_agent == 1
    rates = inst.welfare_rates
    assert rates[1] - rates[0] == pytest.approx(0.2 * 2.0)
    assert inst.ctrs[0] == pytest.approx(0.5 + 10_000 ** -0.5)


def test_hard_delta_gap_needs_two_agents():
    with pytest.raises(ConfigurationError):
        make_delta_gap_hard_instance(0.1, 1.0, 1, 10_000)


def test_delta_gap_of_single_agent_is_infinite():
    assert math.isinf(delta_gap_of(make_delta_gap_instance(0.1, 1)))
