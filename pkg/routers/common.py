"""
Shared request models and helpers for the command-line routers.
"""
import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Type, TypeVar

from pydantic import BaseModel, Field, ValidationError, field_validator

from core.app import resolved_config
from core.exceptions import ConfigurationError
from models import BidProfile, Realization, parse_bid
from services.experiment_service import format_cell, write_csv
from services.mechanism_service import (
    FIXTURE_RULES,
    RULE_NAMES,
    Mechanism,
    check_rule_name,
    fixture_mechanism,
    get_mechanism,
    get_payment,
    zero_payments,
)

Request = TypeVar("Request", bound=BaseModel)


class RunConfig(BaseModel):
    """Fields every subcommand takes."""
    seed: int = Field(..., ge=0, lt=2 ** 64)
    output_dir: Optional[str] = None
    format: Literal["csv", "json"] = "csv"
    threads: int = Field(1, ge=1)


class RuleRequest(RunConfig):
    rule: str
    k: int = Field(2, ge=1)
    T: int = Field(..., ge=1)
    v_max: float = Field(1.0, gt=0)
    payment: Optional[str] = None
    t0: Optional[int] = Field(None, ge=0)
    schedule: Optional[Literal["fixed", "confidence"]] = None

    @field_validator("rule")
    @classmethod
    def known_rule(cls, rule: str) -> str:
        if rule in FIXTURE_RULES:
            return rule
        return check_rule_name(rule)

    @field_validator("payment")
    @classmethod
    def known_payment(cls, payment: Optional[str]) -> Optional[str]:
        get_payment(payment)
        return payment

    def rule_options(self) -> Dict[str, Any]:
        options = {"t0": self.t0, "schedule": self.schedule}
        return {key: value for key, value in options.items() if value is not None}

    def mechanism(self) -> Mechanism:
        payment = get_payment(self.payment)
        if self.rule in FIXTURE_RULES:
            return fixture_mechanism(self.rule, payment or zero_payments)
        return get_mechanism(self.rule, v_max=self.v_max, payment=payment, **self.rule_options())


@dataclass
class CommandOutcome:
    """What a handler reports back to the application."""
    exit_code: int = 0
    summary: Dict[str, Any] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)


def add_run_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=None, help="64-bit seed (mandatory)")
    parser.add_argument("--output-dir", dest="output_dir", default=None)
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads; results do not depend on it")


def add_rule_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--rule", required=True,
                        help=f"one of {', '.join(RULE_NAMES)} (or a checker fixture: {', '.join(FIXTURE_RULES)})")
    parser.add_argument("--k", type=int, default=2)
    parser.add_argument("--T", type=int, required=True)
    parser.add_argument("--v-max", dest="v_max", type=float, default=1.0)
    parser.add_argument("--payment", default=None,
                        help="payment rule override: zero, first-price, per-impression, myerson, charges")
    parser.add_argument("--t0", type=int, default=None, help="naive exploration length override")
    parser.add_argument("--schedule", choices=["fixed", "confidence"], default=None,
                        help="elimination threshold schedule (default fixed)")


def error_text(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        where = ".".join(str(x) for x in error["loc"]) or "request"
        message = error["msg"].removeprefix("Value error, ")
        parts.append(f"{where}: {message}")
    return "; ".join(parts)


def build_request(model: Type[Request], args: argparse.Namespace) -> Request:
    """Validate parsed flags into a request model; any problem is a configuration error."""
    values = {name: getattr(args, name) for name in model.model_fields if getattr(args, name, None) is not None}
    try:
        return model(**values)
    except ValidationError as e:
        raise ConfigurationError(error_text(e))


def parse_list(text: Optional[str], convert=float) -> Optional[List[Any]]:
    if text is None:
        return None
    try:
        return [convert(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigurationError(f"Not a comma-separated list: {text!r}")


def parse_bids(text: str, k: Optional[int] = None) -> BidProfile:
    bids = BidProfile(tuple(parse_bid(x) for x in text.split(",") if x.strip()))
    if k is not None and bids.k != k:
        raise ConfigurationError(f"Expected {k} bids, got {bids.k}")
    return bids


def read_realization(path: str) -> Realization:
    if not os.path.isfile(path):
        raise ConfigurationError(f"Realization file not found: {path}")
    with open(path, encoding="utf-8") as f:
        return Realization.from_text(f.read())


def write_text(path: str, text: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return path


def _json_cell(value):
    if isinstance(value, bool):
        return value
    text = format_cell(value)
    try:
        number = float(text)
    except ValueError:
        return text
    return int(text) if text.lstrip("-").isdigit() else number


def write_table(directory: str, stem: str, header: Sequence[str], rows: Iterable[dict], fmt: str) -> str:
    """Rows as <stem>.csv, or as <stem>.json holding the same fields."""
    if fmt == "csv":
        return write_csv(os.path.join(directory, f"{stem}.csv"), header, rows)
    records = [{key: _json_cell(row[key]) for key in header} for row in rows]
    return write_text(os.path.join(directory, f"{stem}.json"), json.dumps(records, indent=2) + "\n")


def write_run_config(directory: str, stem: str, args: argparse.Namespace) -> str:
    """The resolved configuration next to a run's tables, enough to rerun it."""
    config = resolved_config(args)
    return write_text(os.path.join(directory, f"{stem}.config.json"),
                      json.dumps(config, indent=2, sort_keys=True, default=str) + "\n")


def print_json(payload: Any):
    json.dump(payload, sys.stdout, indent=2, default=str)
    sys.stdout.write("\n")
