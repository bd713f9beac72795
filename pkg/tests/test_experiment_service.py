import math

import numpy as np
import pytest
from pydantic import ValidationError

from core.exceptions import ConfigurationError, DegenerateFitError
from services.experiment_service import (
    REGRET_HEADER,
    RegretPoint,
    SweepSpec,
    delta_gap_sweep,
    fit_scaling,
    fixture_realization,
    format_cell,
    growth_ratios,
    psim_adversarial_bench,
    psim_regret_envelope,
    regret_points,
    regret_scaling_sweep,
    ucb1_underbid_experiment,
    write_fit_csv,
    write_regret_csv,
)


def spec(**overrides):
    values = dict(rules=["naive", "ucb1"], family="delta-gap", T_values=[50, 100], k=2, trials=30, seed=1)
    values.update(overrides)
    return SweepSpec(**values)


def test_sweep_spec_validation():
    with pytest.raises(ValidationError, match="valid rules"):
        spec(rules=["naive", "greedy"])
    with pytest.raises(ValidationError, match="strictly increasing"):
        spec(T_values=[100, 50])
    with pytest.raises(ValidationError, match="at least 30 trials"):
        spec(trials=10)
    with pytest.raises(ValidationError, match="family"):
        spec(family="random")
    with pytest.raises(ValidationError):
        spec(delta=0.3)


def test_sweep_spec_instances():
    assert [i.label for i in spec(family="lower-bound").instances(1000)] == ["I_0", "I_1", "J_0", "J_1"]
    hard = spec(family="delta-gap-hard", k=3, delta=0.1).instances(10_000)
    assert hard[0].best_agent == 1


def test_sweep_spec_selects_the_elimination_schedule():
    assert spec().rule_options("elimination") == {"schedule": "fixed"}
    assert spec(elimination_schedule="confidence").rule_options("elimination") == {"schedule": "confidence"}
    assert spec(elimination_schedule="confidence").rule_options("naive") == {}
    with pytest.raises(ValidationError):
        spec(elimination_schedule="geometric")


def test_fit_recovers_a_power_law():
    points = [(T, 2.0 * T ** 0.5, 0.1) for T in (100, 400, 1600, 6400)]
    fit = fit_scaling("naive", points)
    assert fit.exponent == pytest.approx(0.5)
    assert fit.intercept == pytest.approx(math.log(2.0))
    low, high = fit.confidence_interval()
    assert low <= fit.exponent <= high


def test_fit_needs_enough_positive_points():
    points = [(100, 1.0, 0.1), (200, 0.0, 0.0), (400, 2.0, 0.1), (800, 3.0, 0.1)]
    with pytest.raises(DegenerateFitError):
        fit_scaling("ucb1", points)


def test_regret_points_add_a_worst_row_and_sort():
    points = regret_points(spec())
    assert [(p.rule, p.T, p.instance) for p in points] == [
        ("naive", 50, "gap_0.25"), ("naive", 50, "worst"), ("naive", 100, "gap_0.25"), ("naive", 100, "worst"),
        ("ucb1", 50, "gap_0.25"), ("ucb1", 50, "worst"), ("ucb1", 100, "gap_0.25"), ("ucb1", 100, "worst"),
    ]
    assert points[1].regret == points[0].regret


def test_regret_points_do_not_depend_on_threads(isolated_settings):
    isolated_settings.trial_batch_size = 8
    assert regret_points(spec(threads=1)) == regret_points(spec(threads=4))


def test_short_sweep_reports_a_degenerate_fit():
    with pytest.raises(DegenerateFitError):
        regret_scaling_sweep(spec())


def test_growth_ratios():
    points = [
        RegretPoint("ucb1", "gap", 2, 100, 30, 1, 10.0, 1.0),
        RegretPoint("ucb1", "gap", 2, 400, 30, 1, 20.0, 1.0),
        RegretPoint("ucb1", "gap", 2, 1600, 30, 1, 0.0, 0.0),
    ]
    first, second = growth_ratios(points)
    assert first.ratio == pytest.approx(2.0)
    assert first.ratio_stderr == pytest.approx(2.0 * math.hypot(0.1, 0.05))
    assert not first.low_power
    assert math.isnan(second.ratio) and second.low_power


def test_delta_gap_sweep_uses_gap_instances():
    points, ratios = delta_gap_sweep(spec(family="lower-bound", rules=["naive"]), delta=0.2)
    assert {p.instance for p in points} == {"gap_0.2"}
    assert len(ratios) == 1
    assert (ratios[0].T_from, ratios[0].T_to) == (50, 100)


def test_underbid_experiment_pairs_against_truthful_bidding():
    report = ucb1_underbid_experiment([0.75, 0.5], [1.0, 1.0], 60, [0.8, 1.0], trials=40, seed=2)
    assert [p.shading for p in report.points] == [0.8, 1.0]
    truthful = report.points[-1]
    assert truthful.gain == 0.0 and truthful.gain_stderr == 0.0
    assert report.best in report.points


def test_underbid_experiment_needs_a_best_agent_zero():
    with pytest.raises(ConfigurationError):
        ucb1_underbid_experiment([0.5, 0.75], [1.0, 1.0], 60, [0.8], trials=40, seed=2)


def test_fixture_realizations():
    assert fixture_realization("alternating", 2, 4).to_text() == "1010\n0101\n"
    assert fixture_realization("switching", 2, 4).to_text() == "1100\n0011\n"
    assert fixture_realization("all_zero", 3, 2).to_text() == "00\n00\n00\n"
    with pytest.raises(ConfigurationError):
        fixture_realization("random", 2, 4)


def test_psim_bench():
    assert psim_regret_envelope(1, 100) == 0.0
    assert psim_regret_envelope(2, 8) == pytest.approx((2 * math.log(2)) ** (1 / 3) * 4)
    report = psim_adversarial_bench([20, 40, 80, 160], 2, ["constant_best"], seeds=3, seed=4)
    assert [r.T for r in report.rows] == [20, 40, 80, 160]
    assert all(r.regret > 0 for r in report.rows)
    assert "constant_best" in report.fits
    assert report.calibrated_constant == max(r.constant for r in report.rows)


def test_format_cell():
    assert format_cell(True) == "1"
    assert format_cell(np.int64(7)) == "7"
    assert format_cell(1 / 3) == "0.333333333333"
    assert format_cell(0.1 + 0.2) == "0.3"
    assert format_cell("worst") == "worst"


def test_regret_csv_layout(tmp_path):
    path = write_regret_csv(str(tmp_path / "out" / "regret.csv"),
                            [RegretPoint("naive", "I_0", 2, 100, 30, 7, 1 / 3, 0.05)])
    with open(path, encoding="utf-8", newline="") as f:
        text = f.read()
    assert text == ",".join(REGRET_HEADER) + "\nnaive,I_0,2,100,30,7,0.333333333333,0.05\n"


def test_fit_csv_layout(tmp_path):
    fit = fit_scaling("ucb1", [(T, float(T), 0.0) for T in (10, 100, 1000, 10_000)])
    path = write_fit_csv(str(tmp_path / "fits.csv"), {"ucb1": fit})
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert lines[0] == "rule,exponent,exponent_stderr,intercept"
    assert lines[1].startswith("ucb1,1,")
