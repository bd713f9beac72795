"""
sweep: regret scaling, δ-gap growth, UCB1 underbidding and the PSim adversarial bench.
"""
import argparse
import logging
from typing import Literal, Optional

from pydantic import Field, ValidationError

from config.settings import get_settings
from core.exceptions import ConfigurationError, DegenerateFitError
from routers.common import (
    CommandOutcome,
    RunConfig,
    add_run_arguments,
    build_request,
    error_text,
    parse_list,
    print_json,
    write_run_config,
    write_table,
)
from services.experiment_service import (
    BENCH_HEADER,
    FIT_HEADER,
    PATTERNS,
    RATIO_HEADER,
    REGRET_HEADER,
    UNDERBID_HEADER,
    SweepSpec,
    delta_gap_sweep,
    fit_points,
    psim_adversarial_bench,
    regret_points,
    ucb1_underbid_experiment,
)

logger = logging.getLogger(__name__)

NAME = "sweep"


class SweepRequest(RunConfig):
    """Request model for an experiment sweep"""
    kind: Literal["regret", "delta-gap", "underbid", "psim-bench"] = "regret"
    rules: str = "naive,ucb1"
    family: Optional[str] = None
    T_values: str
    k: int = Field(2, ge=1)
    v_max: float = Field(1.0, gt=0)
    trials: int = Field(200, ge=1)
    delta: float = 0.25
    lam: float = 1.0
    schedule: Literal["fixed", "confidence"] = "fixed"
    ctrs: str = "0.75,0.5"
    values: str = "1,1"
    shadings: str = "0.5,0.6,0.7,0.8,0.9,1.0"
    patterns: str = ",".join(PATTERNS)


def register(subparsers):
    parser = subparsers.add_parser(NAME, help="run an experiment and write its CSV files")
    add_run_arguments(parser)
    parser.add_argument("--kind", choices=["regret", "delta-gap", "underbid", "psim-bench"], default="regret")
    parser.add_argument("--rules", default=None, help="comma-separated rule names")
    parser.add_argument("--family", default=None, help="lower-bound, delta-gap or delta-gap-hard")
    parser.add_argument("--T", dest="T_values", required=True, help="comma-separated increasing horizons")
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--v-max", dest="v_max", type=float, default=None)
    parser.add_argument("--trials", type=int, default=None, help="trials per point (seeds for psim-bench)")
    parser.add_argument("--delta", type=float, default=None)
    parser.add_argument("--lam", type=float, default=None, help="λ of the hard δ-gap instance")
    parser.add_argument("--schedule", choices=["fixed", "confidence"], default=None,
                        help="elimination threshold schedule")
    parser.add_argument("--ctrs", default=None, help="underbid: CTRs")
    parser.add_argument("--values", default=None, help="underbid: values")
    parser.add_argument("--shadings", default=None, help="underbid: shading factors")
    parser.add_argument("--patterns", default=None, help=f"psim-bench: subset of {', '.join(PATTERNS)}")


def _spec(request: SweepRequest, default_family: str) -> SweepSpec:
    try:
        return SweepSpec(
            rules=[r.strip() for r in request.rules.split(",") if r.strip()],
            family=request.family or default_family,
            T_values=parse_list(request.T_values, int),
            k=request.k,
            v_max=request.v_max,
            trials=request.trials,
            seed=request.seed,
            delta=request.delta,
            lam=request.lam,
            elimination_schedule=request.schedule,
            threads=request.threads,
        )
    except ValidationError as e:
        raise ConfigurationError(error_text(e))


def _regret(request: SweepRequest, out_dir: str) -> CommandOutcome:
    spec = _spec(request, "lower-bound")
    points = regret_points(spec)
    outputs = [write_table(out_dir, "regret_points", REGRET_HEADER, [p.row() for p in points], request.format)]
    try:
        fits = fit_points(points)
    except DegenerateFitError as e:
        logger.error(e.message)
        return CommandOutcome(1, {"error": e.message}, outputs)
    outputs.append(write_table(out_dir, "regret_fits", FIT_HEADER, [fits[r].row() for r in sorted(fits)],
                               request.format))
    summary = {rule: {"exponent": f.exponent, "exponent_stderr": f.exponent_stderr} for rule, f in fits.items()}
    print_json(summary)
    return CommandOutcome(0, summary, outputs)


def _delta_gap(request: SweepRequest, out_dir: str) -> CommandOutcome:
    spec = _spec(request, "delta-gap")
    points, ratios = delta_gap_sweep(spec)
    outputs = [
        write_table(out_dir, "delta_gap_points", REGRET_HEADER, [p.row() for p in points], request.format),
        write_table(out_dir, "delta_gap_ratios", RATIO_HEADER, [r.row() for r in ratios], request.format),
    ]
    summary = {f"{r.rule}:{r.T_from}->{r.T_to}": {"ratio": r.ratio, "stderr": r.ratio_stderr,
                                                   "low_power": r.low_power} for r in ratios}
    print_json(summary)
    return CommandOutcome(0, summary, outputs)


def _underbid(request: SweepRequest, out_dir: str) -> CommandOutcome:
    horizons = parse_list(request.T_values, int)
    if len(horizons) != 1:
        raise ConfigurationError("The underbid experiment takes a single horizon")
    report = ucb1_underbid_experiment(parse_list(request.ctrs), parse_list(request.values), horizons[0],
                                      parse_list(request.shadings), request.trials, request.seed, request.threads)
    outputs = [write_table(out_dir, "ucb1_underbid", UNDERBID_HEADER, [p.row() for p in report.points],
                           request.format)]
    best = report.best
    summary = {"best_shading": best.shading, "gain": best.gain, "gain_stderr": best.gain_stderr,
               "significant": report.significant}
    print_json(summary)
    return CommandOutcome(0, summary, outputs)


def _psim_bench(request: SweepRequest, out_dir: str) -> CommandOutcome:
    patterns = [p.strip() for p in request.patterns.split(",") if p.strip()]
    report = psim_adversarial_bench(parse_list(request.T_values, int), request.k, patterns, request.trials,
                                    request.seed, request.v_max)
    outputs = [
        write_table(out_dir, "psim_bench", BENCH_HEADER, [r.row() for r in report.rows], request.format),
        write_table(out_dir, "psim_bench_fits", FIT_HEADER,
                    [report.fits[p].row() for p in sorted(report.fits)], request.format),
    ]
    summary = {"calibrated_constant": report.calibrated_constant,
               "exponents": {p: f.exponent for p, f in report.fits.items()}}
    print_json(summary)
    return CommandOutcome(0, summary, outputs)


def handle(args: argparse.Namespace) -> CommandOutcome:
    request = build_request(SweepRequest, args)
    out_dir = request.output_dir or get_settings().output_directory
    runners = {"regret": _regret, "delta-gap": _delta_gap, "underbid": _underbid, "psim-bench": _psim_bench}
    config_path = write_run_config(out_dir, f"sweep_{request.kind}", args)
    outcome = runners[request.kind](request, out_dir)
    outcome.outputs.append(config_path)
    return outcome
