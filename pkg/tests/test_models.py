from fractions import Fraction

import numpy as np
import pytest

from core.exceptions import ConfigurationError
from models import (
    BidProfile,
    ClickAllocation,
    History,
    MechanismOutcome,
    Realization,
    StochasticInstance,
    format_number,
    parse_bid,
)


def test_parse_bid_keeps_decimals_exact():
    assert parse_bid("0.5") == Fraction(1, 2)
    assert parse_bid("3/2") == Fraction(3, 2)
    assert isinstance(parse_bid("2"), Fraction)


def test_parse_bid_rejects_garbage():
    with pytest.raises(ConfigurationError):
        parse_bid("abc")


def test_format_number():
    assert format_number(Fraction(3, 2)) == "3/2"
    assert format_number(Fraction(4, 2)) == "2"
    assert format_number(0.25) == "0.25"


def test_bid_profile_requires_positive_bids():
    with pytest.raises(ConfigurationError):
        BidProfile((1, 0))
    with pytest.raises(ConfigurationError):
        BidProfile(())


def test_bid_profile_exactness_drives_array_dtype():
    assert BidProfile.parse("1,3/2").as_array().dtype == object
    assert BidProfile((1.0, 2.5)).as_array().dtype == np.float64


def test_with_bid_replaces_one_agent():
    bids = BidProfile.parse("1,2,3")
    assert bids.with_bid(1, Fraction(5)).bids == (1, 5, 3)
    assert bids.bids == (1, 2, 3)


def test_realization_text_format():
    rho = Realization.from_text("0110\n1001\n")
    assert rho.k == 2 and rho.T == 4
    assert rho.to_text() == "0110\n1001\n"
    assert rho.array[1, 3] == 1


def test_realization_rejects_ragged_and_non_binary_rows():
    with pytest.raises(ConfigurationError):
        Realization.from_text("011\n10")
    with pytest.raises(ConfigurationError):
        Realization.from_text("012\n100")


def test_realization_flip_is_a_copy():
    rho = Realization.zeros(2, 3)
    flipped = rho.flip(1, 2)
    assert flipped.bits[1][2] == 1
    assert rho.bits[1][2] == 0


def test_history_records_and_prefix():
    history = History.from_sequences([0, 1, 1], [1, 0, 1])
    assert history.T == 3
    assert history.prefix(2).agents == (0, 1)
    assert history.to_records()[2] == {"round": 2, "agent": 1, "click": 1}


def test_mechanism_outcome_derives_utilities():
    outcome = MechanismOutcome(
        history=History.from_sequences([0, 0], [1, 1]),
        allocation=ClickAllocation((2, 0), (2, 0)),
        payments=(Fraction(1, 2), 0),
        values=(Fraction(1), Fraction(1)),
    )
    assert outcome.utilities == (Fraction(3, 2), 0)
    assert outcome.to_dict()["utilities"] == ["3/2", "0"]


def test_stochastic_instance_validation():
    bids = BidProfile((1.0, 1.0))
    with pytest.raises(ConfigurationError):
        StochasticInstance(k=2, T=10, ctrs=(0.5, 1.5), values=(1.0, 1.0), bids=bids, v_max=1.0)
    with pytest.raises(ConfigurationError):
        StochasticInstance(k=2, T=10, ctrs=(0.5, 0.5), values=(1.0, 2.0), bids=bids, v_max=1.0)
    inst = StochasticInstance(k=2, T=10, ctrs=(0.5, 0.75), values=(1.0, 1.0), bids=bids, v_max=1.0)
    assert inst.best_agent == 1
