"""
monomial-verify: Monte-Carlo check that the γ-mixture's monomial payments match
the Myerson payment polynomial, plus the symbolic identities behind them.
"""
import argparse
import logging

from pydantic import Field

from core.exceptions import ConfigurationError
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
)
from services.expectation_service import (
    check_exploration_identity,
    history_probability_total,
    verify_expected_payment,
)
from services.polynomial import CtrPolynomial

logger = logging.getLogger(__name__)

NAME = "monomial-verify"
VERIFY_HEADER = ["mu", "agent", "polynomial", "mean", "stderr", "z"]


class MonomialRequest(RuleRequest):
    """Request model for a monomial payment verification"""
    bids: str
    gamma: float = Field(0.5, gt=0, lt=1)
    mu: str = "0.5,0.5"
    trials: int = Field(100_000, ge=2)
    identities: bool = False


def register(subparsers):
    parser = subparsers.add_parser(NAME, help="verify monomial payments against the payment polynomial")
    add_rule_arguments(parser)
    add_run_arguments(parser)
    parser.add_argument("--bids", required=True)
    parser.add_argument("--gamma", type=float, default=None, help="probability of the target branch")
    parser.add_argument("--mu", default=None, help="CTR vectors, e.g. '0.3,0.6;0.5,0.5'")
    parser.add_argument("--trials", type=int, default=None)
    parser.add_argument("--identities", action="store_true", default=None,
                        help="also check probability normalization and the exploration identity")


def _identities(request: MonomialRequest, bids) -> dict:
    rule = request.mechanism().rule(request.k, request.T)
    total = history_probability_total(rule, bids)
    return {
        "probabilities_sum_to_one": total == CtrPolynomial.constant(request.k, 1),
        "exploration_identity": check_exploration_identity(request.k, request.T),
    }


def handle(args: argparse.Namespace) -> CommandOutcome:
    request = build_request(MonomialRequest, args)
    bids = parse_bids(request.bids, request.k)
    mus = [parse_list(part) for part in request.mu.split(";") if part.strip()]
    if not mus or any(len(mu) != request.k for mu in mus):
        raise ConfigurationError(f"Every --mu vector needs {request.k} CTRs")

    rows, passed = [], True
    for n, mu in enumerate(mus):
        rule = request.mechanism().rule(request.k, request.T)
        report = verify_expected_payment(rule, bids, request.gamma, mu, request.trials, request.seed + n)
        passed = passed and report.passed
        for a in report.agents:
            rows.append({"mu": ",".join(format(m, "g") for m in mu), "agent": a.agent, "polynomial": a.polynomial,
                         "mean": a.mean, "stderr": a.stderr, "z": a.z})
    summary = {"max_abs_z": max((abs(r["z"]) for r in rows), default=0.0), "passed": passed}
    if request.identities:
        identities = _identities(request, bids)
        summary.update(identities)
        passed = passed and all(identities.values())
    print_json({"rows": rows, **summary})

    outputs = []
    if request.output_dir:
        stem = f"monomial_{request.rule}_k{request.k}_T{request.T}"
        outputs.append(write_table(request.output_dir, stem, VERIFY_HEADER, rows, request.format))
    if not passed:
        logger.warning(f"Monomial payment verification failed for {request.rule}")
    return CommandOutcome(0 if passed else 1, summary, outputs)
