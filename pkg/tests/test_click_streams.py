import numpy as np
import pytest

from core.exceptions import ConfigurationError
from models import Realization
from services.click_streams import (
    EnumeratedSource,
    RealizationSource,
    StochasticSource,
    make_rng,
    realization_from_index,
    realization_index,
)


def test_enumerated_bit_layout():
    # bit (j, t) sits at position j*T + t
    rho = realization_from_index(0b100010, k=2, T=3)
    assert rho.bits == ((0, 1, 0), (0, 0, 1))
    assert realization_index(rho) == 0b100010


def test_enumerated_source_matches_materialized_realizations():
    source = EnumeratedSource(2, 3, np.arange(64))
    for t in range(3):
        column = source.column(t)
        for run in (0, 17, 63):
            assert tuple(column[run]) == tuple(source.realization(run).array[:, t])


def test_realization_source_rows_reuse_realizations():
    rho = Realization.from_text("101\n010")
    source = RealizationSource.repeated(rho, 4)
    assert source.n_runs == 4
    assert np.array_equal(source.column(0), np.array([[1, 0]] * 4))
    assert source.realization(3) == rho


def test_stochastic_source_is_independent_of_batching():
    whole = StochasticSource([0.3, 0.7], 50, seed=11, trial_ids=np.arange(6))
    part = StochasticSource([0.3, 0.7], 50, seed=11, trial_ids=np.arange(3, 6))
    a = np.stack([whole.column(t) for t in range(50)], axis=-1)
    b = np.stack([part.column(t) for t in range(50)], axis=-1)
    assert np.array_equal(a[3:], b)
    assert whole.realization(4) == part.realization(1)


def test_stochastic_source_materialization_matches_stream():
    source = StochasticSource([0.5, 0.5], 20, seed=3, trial_ids=[7])
    streamed = np.stack([source.column(t)[0] for t in range(20)], axis=-1)
    assert np.array_equal(streamed, source.realization(0).array)


def test_stochastic_source_must_be_read_in_order():
    source = StochasticSource([0.5], 10, seed=0, trial_ids=[0], chunk=4)
    source.column(0)
    with pytest.raises(ConfigurationError):
        source.column(7)


def test_stochastic_source_rejects_bad_ctrs():
    with pytest.raises(ConfigurationError):
        StochasticSource([0.5, 1.2], 5, seed=0, trial_ids=[0])


def test_make_rng_streams_differ():
    assert make_rng(1, 0).random() != make_rng(1, 1).random()
    assert make_rng(1, 0, 5).random() == make_rng(1, 0, 5).random()
