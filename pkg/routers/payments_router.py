"""
payments: Myerson payments for a given fixture (bids plus realization), optionally as CTR polynomials.
"""
import argparse
import dataclasses
import logging
from typing import Optional

import numpy as np
from pydantic import Field

from core.exceptions import ConfigurationError
from models import format_number
from routers.common import (
    CommandOutcome,
    RuleRequest,
    add_rule_arguments,
    add_run_arguments,
    build_request,
    parse_bids,
    parse_list,
    print_json,
    read_realization,
    write_table,
)
from services.allocation_service import run_allocation
from services.click_streams import StochasticSource
from services.expectation_service import expected_clicks_polynomial, myerson_expected_payment_polynomial
from services.mechanism_service import naive_payments
from services.myerson_service import myerson_payment, myerson_payment_from_history
from services.psim_service import psim_gamma, psim_params, psim_payment_per_click

logger = logging.getLogger(__name__)

NAME = "payments"
PAYMENT_HEADER = ["agent", "bid", "clicks", "myerson", "observed_only", "closed_form"]


class PaymentsRequest(RuleRequest):
    """Request model for a payment computation"""
    bids: str
    ctrs: Optional[str] = None
    realization_file: Optional[str] = None
    observed_only: bool = False
    expected: bool = False
    gamma: float = Field(1.0, gt=0, le=1)
    exploration_clicks: Optional[str] = None
    epsilon: Optional[float] = Field(None, gt=0)


def register(subparsers):
    parser = subparsers.add_parser(NAME, help="Myerson payments for a fixture")
    add_rule_arguments(parser)
    add_run_arguments(parser)
    parser.add_argument("--bids", required=True)
    parser.add_argument("--ctrs", default=None, help="CTRs for sampling the realization; default 0.5 each")
    parser.add_argument("--realization-file", dest="realization_file", default=None)
    parser.add_argument("--observed-only", dest="observed_only", action="store_true", default=None,
                        help="also compute the payment from observed clicks only")
    parser.add_argument("--expected", action="store_true", default=None,
                        help="print expected clicks and γ-scaled Myerson payment as CTR polynomials")
    parser.add_argument("--gamma", type=float, default=None)
    parser.add_argument("--exploration-clicks", dest="exploration_clicks", default=None,
                        help="psim: exploration click counts s_j of earlier phases")
    parser.add_argument("--epsilon", type=float, default=None, help="psim: learning-rate override")


def _psim(request: PaymentsRequest) -> CommandOutcome:
    if request.exploration_clicks is None:
        raise ConfigurationError("psim payments need --exploration-clicks")
    bids = parse_bids(request.bids, request.k)
    s = parse_list(request.exploration_clicks, int)
    params = psim_params(request.k, request.T, request.v_max)
    if request.epsilon is not None:
        params = dataclasses.replace(params, epsilon=request.epsilon)
    rows = [{"agent": i, "gamma": psim_gamma(params, bids, i, s),
             "price_per_click": psim_payment_per_click(params, bids, i, s)} for i in range(request.k)]
    print_json(rows)
    return CommandOutcome(0, {"prices": [r["price_per_click"] for r in rows]})


def handle(args: argparse.Namespace) -> CommandOutcome:
    request = build_request(PaymentsRequest, args)
    if request.rule == "psim":
        return _psim(request)
    bids = parse_bids(request.bids, request.k)
    rule = request.mechanism().rule(request.k, request.T)
    if not rule.deterministic:
        raise ConfigurationError(f"Myerson payments need a deterministic rule; {rule.name} is randomized")

    if request.realization_file:
        realization = read_realization(request.realization_file)
    else:
        ctrs = parse_list(request.ctrs) or [0.5] * request.k
        realization = StochasticSource(ctrs, request.T, request.seed, np.arange(1)).realization(0)
    history = run_allocation(rule, bids, realization)
    clicks = [0] * request.k
    for record in history.rounds:
        clicks[record.agent] += record.click
    closed_form = naive_payments(history, bids, request.t0) if request.rule == "naive" else None

    rows = []
    for i in range(request.k):
        row = {"agent": i, "bid": format_number(bids[i]), "clicks": clicks[i],
               "myerson": format_number(myerson_payment(rule, bids, realization, i)),
               "observed_only": "", "closed_form": ""}
        if request.observed_only:
            row["observed_only"] = format_number(myerson_payment_from_history(rule, bids, history, i))
        if closed_form is not None:
            row["closed_form"] = format_number(closed_form[i])
        rows.append(row)
    payload = {"rule": request.rule, "bids": str(bids), "realization": realization.to_text().splitlines(),
               "history": history.to_records(), "payments": rows}
    if request.expected:
        gamma = request.gamma if request.gamma < 1 else 1
        payload["expected"] = [
            {"agent": i,
             "clicks": str(expected_clicks_polynomial(rule, bids, i)),
             "payment": str(myerson_expected_payment_polynomial(rule, bids, i, gamma))}
            for i in range(request.k)
        ]
    print_json(payload)

    outputs = []
    if request.output_dir:
        stem = f"payments_{request.rule}_k{request.k}_T{request.T}"
        outputs.append(write_table(request.output_dir, stem, PAYMENT_HEADER, rows, request.format))
    return CommandOutcome(0, {"payments": [r["myerson"] for r in rows]}, outputs)
