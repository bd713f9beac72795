import json
import logging
import os

import pytest

from core.app import main
from services.run_logger import get_run_logger


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_no_command_prints_help(capsys):
    assert main([]) == 2
    assert "simulate" in capsys.readouterr().err


def test_seed_is_mandatory(capsys, caplog):
    with caplog.at_level(logging.ERROR):
        code, _ = run(capsys, "simulate", "--rule", "naive", "--T", "4", "--bids", "1,1")
    assert code == 2
    assert "seed" in caplog.text


def test_unknown_rule_lists_valid_rules(capsys, caplog):
    with caplog.at_level(logging.ERROR):
        code, _ = run(capsys, "simulate", "--rule", "vcg", "--T", "4", "--bids", "1,1", "--seed", "1")
    assert code == 2
    assert "valid rules" in caplog.text and "ucb1" in caplog.text


def test_bad_flags_and_config_are_configuration_errors(capsys):
    assert main(["simulate", "--rule", "naive"]) == 2
    assert main(["--config", "missing.env", "simulate", "--rule", "naive", "--T", "4", "--bids", "1,1",
                 "--seed", "1"]) == 2


def test_simulate_on_a_realization_file(capsys, tmp_path):
    bits = tmp_path / "rho.txt"
    bits.write_text("1110\n0100\n")
    code, payload = run(capsys, "simulate", "--rule", "naive", "--T", "4", "--t0", "1", "--bids", "2,1",
                        "--realization-file", str(bits), "--seed", "1", "--output-dir", "sim")
    assert code == 0
    assert payload["clicks"] == [2, 1]
    assert payload["payments"] == ["1", "0"]
    assert os.path.isfile("sim/simulate_naive_k2_T4_history.csv")
    assert open("sim/simulate_naive_k2_T4.bits", encoding="utf-8").read() == "1110\n0100\n"
    with open("sim/simulate_naive_k2_T4.config.json", encoding="utf-8") as f:
        config = json.load(f)
    assert config["command"] == "simulate"
    assert config["seed"] == 1 and config["t0"] == 1
    assert config["settings"]["max_enumeration_kt"] == 16


def test_simulate_logs_the_run(capsys):
    code, _ = run(capsys, "simulate", "--rule", "ucb1", "--T", "20", "--bids", "1,2", "--ctrs", "0.3,0.6",
                  "--seed", "42")
    assert code == 0
    last = get_run_logger().read_runs()[-1]
    assert last["command"] == "simulate"
    assert last["seed"] == 42
    assert last["exit_code"] == 0
    assert last["config"]["settings"]["max_enumeration_kt"] == 16


def test_simulate_is_reproducible(capsys):
    argv = ["simulate", "--rule", "psim", "--T", "60", "--bids", "1,0.5", "--seed", "7"]
    assert run(capsys, *argv) == run(capsys, *argv)


def test_check_passes_for_naive(capsys):
    code, rows = run(capsys, "check", "--rule", "naive", "--T", "4", "--t0", "1", "--seed", "1")
    assert code == 0
    assert {r["check"] for r in rows} == {"pointwise-monotone", "exploration-separated", "weakly-separated",
                                          "truthful", "normalized"}
    assert all(r["passed"] for r in rows)


def test_check_writes_a_replayable_counterexample(capsys):
    code, rows = run(capsys, "check", "--rule", "ucb1", "--T", "3", "--checks", "expsep", "--seed", "1",
                     "--output-dir", "cex")
    assert code == 1
    path = rows[0]["counterexample"]
    assert os.path.basename(path) == "cex_exploration-separated_ucb1_k2_T3.txt"
    assert os.path.isfile("cex/check_ucb1_k2_T3.csv")
    code, payload = run(capsys, "check", "--rule", "ucb1", "--T", "3", "--seed", "1", "--replay", path)
    assert code == 1
    assert payload["reproduced"] is True


def test_check_budget_exceeded(capsys):
    assert main(["check", "--rule", "naive", "--T", "9", "--seed", "1"]) == 3
    assert main(["check", "--rule", "naive", "--T", "4", "--max-kt", "6", "--seed", "1"]) == 3


def test_unknown_check(capsys):
    assert main(["check", "--rule", "naive", "--T", "4", "--checks", "envy", "--seed", "1"]) == 2


@pytest.mark.parametrize("threads", ["1", "4"])
def test_sweep_writes_regret_and_fit_csv(capsys, threads):
    code, summary = run(capsys, "sweep", "--rules", "naive,ucb1", "--family", "delta-gap", "--T", "20,40,80,160",
                        "--trials", "30", "--seed", "3", "--threads", threads, "--output-dir", "out")
    assert code == 0
    assert set(summary) == {"naive", "ucb1"}
    with open("out/regret_points.csv", encoding="utf-8") as f:
        assert f.readline() == "rule,instance,k,T,trials,seed,regret,stderr\n"
    with open("out/regret_fits.csv", encoding="utf-8") as f:
        assert f.readline() == "rule,exponent,exponent_stderr,intercept\n"
    with open("out/sweep_regret.config.json", encoding="utf-8") as f:
        config = json.load(f)
    assert config["T_values"] == "20,40,80,160" and config["threads"] == int(threads)


def test_sweep_output_does_not_depend_on_threads(capsys):
    outputs = []
    for threads in ("1", "3"):
        directory = f"run{threads}"
        assert main(["sweep", "--rules", "naive,ucb1", "--family", "delta-gap", "--T", "20,40,80,160",
                     "--trials", "40", "--seed", "11", "--threads", threads, "--output-dir", directory]) == 0
        with open(os.path.join(directory, "regret_points.csv"), "rb") as f:
            outputs.append(f.read())
    assert outputs[0] == outputs[1]


def test_sweep_with_too_few_horizons_fails_after_writing_points(capsys):
    code, _ = run(capsys, "sweep", "--rules", "naive", "--family", "delta-gap", "--T", "20,40", "--trials", "30",
                  "--seed", "3", "--output-dir", "short")
    assert code == 1
    assert os.path.isfile("short/regret_points.csv")


def test_sweep_rejects_decreasing_horizons(capsys):
    assert main(["sweep", "--T", "40,20", "--seed", "1"]) == 2


def test_payments_match_the_closed_form(capsys, tmp_path):
    bits = tmp_path / "rho.txt"
    bits.write_text("1110\n0100\n")
    code, payload = run(capsys, "payments", "--rule", "naive", "--T", "4", "--t0", "1", "--bids", "2,1",
                        "--realization-file", str(bits), "--seed", "1", "--observed-only", "--expected")
    assert code == 0
    row = payload["payments"][0]
    assert row["myerson"] == row["closed_form"] == "1"
    assert row["observed_only"] == "1"
    assert len(payload["expected"]) == 2


def test_psim_payments(capsys):
    code, rows = run(capsys, "payments", "--rule", "psim", "--T", "100", "--bids", "1,1",
                     "--exploration-clicks", "1,0", "--epsilon", "0.5", "--seed", "1")
    assert code == 0
    assert rows[0]["gamma"] == pytest.approx(0.6)
    assert rows[0]["price_per_click"] == pytest.approx(0.08277, abs=1e-5)


def test_monomial_verify(capsys):
    code, payload = run(capsys, "monomial-verify", "--rule", "threshold", "--T", "2", "--bids", "3,1",
                        "--mu", "0.5,0.5;0.8,0.3", "--trials", "20000", "--seed", "5", "--identities")
    assert code == 0
    assert payload["probabilities_sum_to_one"] is True
    assert payload["exploration_identity"] is True
    assert len(payload["rows"]) == 4


def test_elimination_schedule_flag(capsys):
    base = ["simulate", "--rule", "elimination", "--T", "50", "--bids", "1,1", "--ctrs", "0.9,0.1", "--seed", "2"]
    assert main(base + ["--schedule", "confidence"]) == 0
    assert main(base + ["--schedule", "geometric"]) == 2
