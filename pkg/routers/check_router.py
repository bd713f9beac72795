"""
check: structural and truthfulness checkers, exhaustive at small scale or Monte-Carlo.
"""
import argparse
import logging
import os
from typing import List, Optional

import numpy as np
from pydantic import Field, field_validator

from config.settings import get_settings
from core.exceptions import ConfigurationError
from models import StochasticInstance
from routers.common import (
    CommandOutcome,
    RuleRequest,
    add_rule_arguments,
    add_run_arguments,
    build_request,
    parse_bids,
    parse_list,
    print_json,
    write_table,
    write_text,
)
from services.click_streams import StochasticSource
from services.verify_service import (
    CheckResult,
    Counterexample,
    EnumerationBudget,
    build_allocation_table,
    check_exploration_separated,
    check_monotone_in_expectation_mc,
    check_normalized,
    check_pointwise_monotone,
    check_truthful_exhaustive,
    check_weakly_separated,
    check_weakly_truthful_mc,
    replay,
)

logger = logging.getLogger(__name__)

NAME = "check"

ALLOCATION_CHECKS = ("pointwise", "expsep", "weaksep")
MECHANISM_CHECKS = ("truthful", "normalized")
MONTE_CARLO_CHECKS = ("weak-truthful", "monotone-mc")
CHECKS = ALLOCATION_CHECKS + MECHANISM_CHECKS + MONTE_CARLO_CHECKS
VERDICT_HEADER = ["check", "passed", "checked", "counterexample"]


class CheckRequest(RuleRequest):
    """Request model for a checker run"""
    checks: List[str] = Field(default_factory=lambda: list(ALLOCATION_CHECKS + MECHANISM_CHECKS))
    grid: Optional[str] = None
    max_kt: Optional[int] = Field(None, ge=1)
    replay: Optional[str] = None
    bids: Optional[str] = None
    ctrs: Optional[str] = None
    trials: int = Field(1000, ge=2)
    seeds: int = Field(200, ge=1)
    fixtures: int = Field(5, ge=1)
    agent: int = Field(0, ge=0)

    @field_validator("checks")
    @classmethod
    def known_checks(cls, checks: List[str]) -> List[str]:
        unknown = [c for c in checks if c not in CHECKS]
        if unknown or not checks:
            raise ConfigurationError(f"Unknown checks {unknown}; valid checks: {', '.join(CHECKS)}")
        return checks


def register(subparsers):
    parser = subparsers.add_parser(NAME, help="run checkers; writes counterexample files on failure")
    add_rule_arguments(parser)
    add_run_arguments(parser)
    parser.add_argument("--checks", type=lambda s: [c.strip() for c in s.split(",") if c.strip()], default=None,
                        help=f"comma-separated subset of {', '.join(CHECKS)}")
    parser.add_argument("--grid", default=None, help="bid grid '1,2,3,4' or per agent '1,2;3,4'")
    parser.add_argument("--max-kt", dest="max_kt", type=int, default=None, help="enumeration budget on k*T")
    parser.add_argument("--replay", default=None, help="re-run a counterexample file instead of checking")
    parser.add_argument("--bids", default=None, help="bids of the other agents for monotone-mc")
    parser.add_argument("--ctrs", default=None, help="CTRs for Monte-Carlo checks; default 0.5 each")
    parser.add_argument("--trials", type=int, default=None)
    parser.add_argument("--seeds", type=int, default=None, help="rule seeds per fixture for weak-truthful")
    parser.add_argument("--fixtures", type=int, default=None, help="sampled realizations for weak-truthful")
    parser.add_argument("--agent", type=int, default=None)


def _budget(request: CheckRequest) -> EnumerationBudget:
    limits = {"max_kt": request.max_kt} if request.max_kt is not None else {}
    if request.grid:
        return EnumerationBudget.parse(request.k, request.grid, **limits)
    return EnumerationBudget.default(request.k, **limits)


def _ctrs(request: CheckRequest) -> List[float]:
    ctrs = parse_list(request.ctrs) or [0.5] * request.k
    if len(ctrs) != request.k:
        raise ConfigurationError(f"Expected {request.k} CTRs, got {len(ctrs)}")
    return ctrs


def _exhaustive(request: CheckRequest, budget: EnumerationBudget) -> List[CheckResult]:
    mechanism = request.mechanism()
    rule = mechanism.rule(request.k, request.T)
    selected = [c for c in request.checks if c in ALLOCATION_CHECKS + MECHANISM_CHECKS]
    if not selected:
        return []
    budget.check(request.k, request.T)
    with_payments = any(c in MECHANISM_CHECKS for c in selected)
    table = build_allocation_table(rule, budget, mechanism=mechanism if with_payments else None,
                                   threads=request.threads)
    results = []
    for name in selected:
        if name == "pointwise":
            results.append(check_pointwise_monotone(rule, budget, table))
        elif name == "expsep":
            results.append(check_exploration_separated(rule, budget, table))
        elif name == "weaksep":
            results.append(check_weakly_separated(rule, budget, table))
        elif name == "truthful":
            results.append(check_truthful_exhaustive(mechanism, request.k, request.T, budget, table))
        else:
            results.append(check_normalized(mechanism, request.k, request.T, budget, table))
    return results


def _monte_carlo(request: CheckRequest, budget: EnumerationBudget) -> List[CheckResult]:
    results = []
    ctrs = _ctrs(request)
    grid = sorted(float(x) for x in budget.grids[min(request.agent, budget.k - 1)])
    if "weak-truthful" in request.checks:
        source = StochasticSource(ctrs, request.T, request.seed, np.arange(request.fixtures))
        realizations = [source.realization(r) for r in range(request.fixtures)]
        report = check_weakly_truthful_mc(request.mechanism(), request.k, request.T, grid, realizations,
                                          request.seeds, request.seed)
        results.append(CheckResult("weak-truthful", report.passed, checked=len(report.estimates)))
    if "monotone-mc" in request.checks:
        if not 0 <= request.agent < request.k:
            raise ConfigurationError(f"Agent {request.agent} outside [0, {request.k})")
        bids = parse_bids(request.bids, request.k) if request.bids else parse_bids(
            ",".join([str(request.v_max)] * request.k))
        v_max = max(request.v_max, *(float(b) for b in bids.bids))
        instance = StochasticInstance(k=request.k, T=request.T, ctrs=tuple(ctrs),
                                      values=tuple(float(b) for b in bids.bids), bids=bids, v_max=v_max)
        rule = request.mechanism().rule(request.k, request.T)
        report = check_monotone_in_expectation_mc(rule, instance, request.agent, grid, request.trials,
                                                  request.seed, request.threads)
        results.append(CheckResult("monotone-mc", report.passed, checked=len(report.points)))
    return results


def _replay(request: CheckRequest) -> CommandOutcome:
    if not os.path.isfile(request.replay):
        raise ConfigurationError(f"Counterexample file not found: {request.replay}")
    with open(request.replay, encoding="utf-8") as f:
        cex = Counterexample.from_text(f.read())
    reproduced = replay(cex, request.mechanism())
    print_json({"replay": request.replay, "kind": cex.kind, "reproduced": reproduced})
    return CommandOutcome(1 if reproduced else 0, {"kind": cex.kind, "reproduced": reproduced})


def handle(args: argparse.Namespace) -> CommandOutcome:
    request = build_request(CheckRequest, args)
    if request.replay:
        return _replay(request)
    budget = _budget(request)
    results = _exhaustive(request, budget) + _monte_carlo(request, budget)

    out_dir = request.output_dir or get_settings().output_directory
    stem = f"{request.rule}_k{request.k}_T{request.T}"
    outputs, rows = [], []
    for result in results:
        path = ""
        if result.counterexample is not None:
            path = write_text(os.path.join(out_dir, f"cex_{result.check}_{stem}.txt"), result.counterexample.to_text())
            outputs.append(path)
        rows.append({"check": result.check, "passed": result.passed, "checked": result.checked,
                     "counterexample": path})
    print_json([{**row, "passed": bool(row["passed"])} for row in rows])
    if request.output_dir:
        outputs.append(write_table(out_dir, f"check_{stem}", VERDICT_HEADER, rows, request.format))

    failed = [r.check for r in results if not r.passed]
    if failed:
        logger.warning(f"{request.rule} failed: {', '.join(failed)}")
    else:
        logger.info(f"{request.rule} passed {len(results)} checks")
    return CommandOutcome(1 if failed else 0, {"passed": [r.check for r in results if r.passed], "failed": failed},
                          outputs)
