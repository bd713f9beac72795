"""
simulate: one mechanism run on a fixed or sampled realization.
"""
import argparse
import logging
import os
from typing import Optional

import numpy as np

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
    read_realization,
    write_run_config,
    write_table,
    write_text,
)
from services.click_streams import RULE_STREAM, StochasticSource, make_rng

logger = logging.getLogger(__name__)

NAME = "simulate"


class SimulateRequest(RuleRequest):
    """Request model for a single run"""
    bids: str
    values: Optional[str] = None
    ctrs: Optional[str] = None
    realization_file: Optional[str] = None


def register(subparsers):
    parser = subparsers.add_parser(NAME, help="run one mechanism and dump history, clicks, payments, utilities")
    add_rule_arguments(parser)
    add_run_arguments(parser)
    parser.add_argument("--bids", required=True, help="comma-separated, e.g. 1,2 or 3/2,1")
    parser.add_argument("--values", default=None, help="true values; default: the bids")
    parser.add_argument("--ctrs", default=None, help="CTRs for sampling the realization; default 0.5 each")
    parser.add_argument("--realization-file", dest="realization_file", default=None,
                        help="one line of 0/1 per agent")


def handle(args: argparse.Namespace) -> CommandOutcome:
    request = build_request(SimulateRequest, args)
    bids = parse_bids(request.bids, request.k)
    values = parse_bids(request.values, request.k).bids if request.values else None

    if request.realization_file:
        realization = read_realization(request.realization_file)
        if realization.k != request.k or realization.T != request.T:
            raise ConfigurationError(
                f"Realization file is {realization.k}x{realization.T}, expected {request.k}x{request.T}"
            )
    else:
        ctrs = parse_list(request.ctrs) or [0.5] * request.k
        if len(ctrs) != request.k:
            raise ConfigurationError(f"Expected {request.k} CTRs, got {len(ctrs)}")
        realization = StochasticSource(ctrs, request.T, request.seed, np.arange(1)).realization(0)

    mechanism = request.mechanism()
    outcome = mechanism.play(bids, realization, values, rng=make_rng(request.seed, RULE_STREAM, 0))
    payload = {
        "rule": request.rule,
        "k": request.k,
        "T": request.T,
        "seed": request.seed,
        "bids": str(bids),
        "realization": realization.to_text().splitlines(),
        **outcome.to_dict(),
    }
    print_json(payload)

    outputs = []
    if request.output_dir:
        stem = f"simulate_{request.rule}_k{request.k}_T{request.T}"
        outputs.append(write_table(request.output_dir, f"{stem}_history", ["round", "agent", "click"],
                                   outcome.history.to_records(), request.format))
        outputs.append(write_text(os.path.join(request.output_dir, f"{stem}.bits"), realization.to_text()))
        outputs.append(write_run_config(request.output_dir, stem, args))
    logger.info(f"{request.rule}: clicks {list(outcome.allocation.clicks)}, payments {payload['payments']}")
    return CommandOutcome(0, {"clicks": list(outcome.allocation.clicks), "payments": payload["payments"]}, outputs)
