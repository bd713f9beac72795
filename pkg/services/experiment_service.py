"""
Reproducible experiment recipes: regret scaling sweeps, δ-gap growth,
UCB1 underbidding and the PSim adversarial bench, plus their CSV writers.
"""
import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy import stats

from config.settings import get_settings
from core.exceptions import ConfigurationError, DegenerateFitError
from models import BidProfile, Realization, StochasticInstance
from services.allocation_service import (
    regret_adversarial,
    regret_stochastic,
    trial_batches,
)
from services.click_streams import RULE_STREAM, StochasticSource, make_rng
from services.instance_service import lower_bound_family, make_delta_gap_hard_instance, make_delta_gap_instance
from services.mechanism_service import check_rule_name, get_mechanism, get_rule

logger = logging.getLogger(__name__)

REGRET_HEADER = ["rule", "instance", "k", "T", "trials", "seed", "regret", "stderr"]
FIT_HEADER = ["rule", "exponent", "exponent_stderr", "intercept"]
RATIO_HEADER = ["rule", "instance", "T_from", "T_to", "ratio", "ratio_stderr", "low_power"]
UNDERBID_HEADER = ["shading", "bid", "utility", "stderr", "gain", "gain_stderr"]
BENCH_HEADER = ["pattern", "k", "T", "seeds", "seed", "regret", "bound", "constant"]

FAMILIES = ("lower-bound", "delta-gap", "delta-gap-hard")
PATTERNS = ("constant_best", "all_zero", "alternating", "switching")


class SweepSpec(BaseModel):
    """One sweep: rules × horizons on an instance family."""
    rules: List[str] = Field(..., min_length=1)
    family: str = "lower-bound"
    T_values: List[int] = Field(..., min_length=1)
    k: int = Field(2, ge=1)
    v_max: float = Field(1.0, gt=0)
    trials: int
    seed: int = Field(..., ge=0, lt=2 ** 64)
    delta: float = Field(0.25, gt=0, le=0.25)
    lam: float = Field(1.0, gt=0)
    elimination_schedule: Literal["fixed", "confidence"] = "fixed"
    threads: int = Field(1, ge=1)
    output_path: Optional[str] = None

    @field_validator("rules")
    @classmethod
    def known_rules(cls, rules: List[str]) -> List[str]:
        for name in rules:
            check_rule_name(name)
        return rules

    @field_validator("family")
    @classmethod
    def known_family(cls, family: str) -> str:
        if family not in FAMILIES:
            raise ConfigurationError(f"Unknown instance family {family!r}; valid: {', '.join(FAMILIES)}")
        return family

    @field_validator("T_values")
    @classmethod
    def increasing(cls, values: List[int]) -> List[int]:
        if any(t < 1 for t in values):
            raise ConfigurationError("Horizons must be positive")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigurationError(f"Horizons must be strictly increasing: {values}")
        return values

    @field_validator("trials")
    @classmethod
    def enough_trials(cls, trials: int) -> int:
        minimum = get_settings().min_sweep_trials
        if trials < minimum:
            raise ConfigurationError(f"A sweep needs at least {minimum} trials per point, got {trials}")
        return trials

    def rule_options(self, name: str) -> Dict[str, Any]:
        return {"schedule": self.elimination_schedule} if name == "elimination" else {}

    def instances(self, T: int) -> List[StochasticInstance]:
        if self.family == "lower-bound":
            return lower_bound_family(self.k, T, self.v_max)
        if self.family == "delta-gap":
            return [make_delta_gap_instance(self.delta, self.k, self.v_max, T)]
        return [make_delta_gap_hard_instance(self.delta, self.lam, self.k, T, self.v_max)]


@dataclass(frozen=True)
class RegretPoint:
    rule: str
    instance: str
    k: int
    T: int
    trials: int
    seed: int
    regret: float
    stderr: float

    def row(self) -> dict:
        return {"rule": self.rule, "instance": self.instance, "k": self.k, "T": self.T, "trials": self.trials,
                "seed": self.seed, "regret": self.regret, "stderr": self.stderr}


@dataclass
class ScalingFit:
    """Least squares of ln regret on ln T."""
    rule: str
    points: List[Tuple[int, float, float]]
    exponent: float
    exponent_stderr: float
    intercept: float

    def confidence_interval(self, level: float = 0.95) -> Tuple[float, float]:
        dof = max(len(self.points) - 2, 1)
        half = stats.t.ppf(0.5 + level / 2, dof) * self.exponent_stderr
        return self.exponent - half, self.exponent + half

    def row(self) -> dict:
        return {"rule": self.rule, "exponent": self.exponent, "exponent_stderr": self.exponent_stderr,
                "intercept": self.intercept}


def fit_scaling(rule: str, points: Sequence[Tuple[int, float, float]]) -> ScalingFit:
    usable = [(T, r, se) for T, r, se in points if r > 0]
    minimum = get_settings().min_fit_points
    if len(usable) < minimum:
        raise DegenerateFitError(
            f"{rule}: exponent fit needs {minimum} points with positive regret, got {len(usable)}"
        )
    x = np.log([T for T, _, _ in usable])
    y = np.log([r for _, r, _ in usable])
    result = stats.linregress(x, y)
    return ScalingFit(rule, list(points), float(result.slope), float(result.stderr), float(result.intercept))


# ----------------------------- Regret sweeps ----------------------------- #

def regret_points(spec: SweepSpec) -> List[RegretPoint]:
    """Regret of every rule on every family member at every T, plus a 'worst' row per (rule, T)."""
    points: List[RegretPoint] = []
    for name in spec.rules:
        for T in spec.T_values:
            rule = get_rule(name, spec.k, T, v_max=spec.v_max, **spec.rule_options(name))
            rows = []
            for inst in spec.instances(T):
                estimate = regret_stochastic(rule, inst, spec.trials, spec.seed, spec.threads)
                rows.append(RegretPoint(name, inst.label, spec.k, T, spec.trials, spec.seed,
                                        estimate.mean, estimate.stderr))
            worst = max(rows, key=lambda p: p.regret)
            rows.append(RegretPoint(name, "worst", spec.k, T, spec.trials, spec.seed, worst.regret, worst.stderr))
            points.extend(rows)
            logger.info(f"{name} T={T}: worst regret {worst.regret:.4f} ± {worst.stderr:.4f} on {worst.instance}")
    return sorted(points, key=lambda p: (p.rule, p.T, p.instance))


def fit_points(points: Sequence[RegretPoint], instance: str = "worst") -> Dict[str, ScalingFit]:
    fits = {}
    for name in sorted({p.rule for p in points}):
        rows = sorted((p for p in points if p.rule == name and p.instance == instance), key=lambda p: p.T)
        fits[name] = fit_scaling(name, [(p.T, p.regret, p.stderr) for p in rows])
    return fits


def regret_scaling_sweep(spec: SweepSpec) -> Tuple[List[RegretPoint], Dict[str, ScalingFit]]:
    """Worst-over-family regret per T and its fitted growth exponent, per rule."""
    points = regret_points(spec)
    return points, fit_points(points)


@dataclass(frozen=True)
class GrowthRatio:
    rule: str
    instance: str
    T_from: int
    T_to: int
    ratio: float
    ratio_stderr: float
    low_power: bool

    def row(self) -> dict:
        return {"rule": self.rule, "instance": self.instance, "T_from": self.T_from, "T_to": self.T_to,
                "ratio": self.ratio, "ratio_stderr": self.ratio_stderr, "low_power": int(self.low_power)}


def growth_ratios(points: Sequence[RegretPoint], instance: Optional[str] = None) -> List[GrowthRatio]:
    """R(T_next)/R(T) between consecutive horizons, with a delta-method standard error."""
    threshold = get_settings().low_power_relative_se
    ratios = []
    for name in sorted({p.rule for p in points}):
        rows = sorted((p for p in points if p.rule == name and (instance is None or p.instance == instance)
                       and p.instance != "worst"), key=lambda p: (p.instance, p.T))
        for a, b in zip(rows, rows[1:]):
            if a.instance != b.instance:
                continue
            if a.regret <= 0 or b.regret <= 0:
                ratios.append(GrowthRatio(name, a.instance, a.T, b.T, math.nan, math.nan, True))
                continue
            ratio = b.regret / a.regret
            rel_a, rel_b = a.stderr / a.regret, b.stderr / b.regret
            se = ratio * math.hypot(rel_a, rel_b)
            ratios.append(GrowthRatio(name, a.instance, a.T, b.T, ratio, se, max(rel_a, rel_b) > threshold))
    return ratios


def delta_gap_sweep(spec: SweepSpec, delta: Optional[float] = None) -> Tuple[List[RegretPoint], List[GrowthRatio]]:
    """Regret growth on δ-gap instances; low-power flags mark ratios with noisy regrets."""
    if delta is not None:
        spec = spec.model_copy(update={"delta": delta})
    if spec.family == "lower-bound":
        spec = spec.model_copy(update={"family": "delta-gap"})
    points = [p for p in regret_points(spec) if p.instance != "worst"]
    ratios = growth_ratios(points)
    for r in ratios:
        logger.info(f"{r.rule} R({r.T_to})/R({r.T_from}) = {r.ratio:.3f} ± {r.ratio_stderr:.3f}"
                    + (" (low power)" if r.low_power else ""))
    return points, ratios


# ----------------------------- UCB1 underbidding ----------------------------- #

@dataclass(frozen=True)
class UnderbidPoint:
    shading: float
    bid: float
    utility: float
    stderr: float
    gain: float
    gain_stderr: float

    def row(self) -> dict:
        return {"shading": self.shading, "bid": self.bid, "utility": self.utility, "stderr": self.stderr,
                "gain": self.gain, "gain_stderr": self.gain_stderr}


@dataclass
class UnderbidReport:
    points: List[UnderbidPoint]

    @property
    def best(self) -> UnderbidPoint:
        return max(self.points, key=lambda p: (p.utility, -p.shading))

    @property
    def best_shading(self) -> float:
        return self.best.shading

    @property
    def significant(self) -> bool:
        """The best shading beats truthful bidding by more than 3·SE of the paired difference."""
        best = self.best
        return best.gain > get_settings().flag_sigmas * best.gain_stderr and best.gain > 0


def _stochastic_utilities(mechanism_name: str, inst: StochasticInstance, bids: BidProfile, agent: int,
                          trials: int, seed: int, threads: int = 1) -> np.ndarray:
    mechanism = get_mechanism(mechanism_name, v_max=float(inst.v_max))
    value = float(inst.values[agent])
    batches = trial_batches(trials)

    def run_batch(index: int) -> np.ndarray:
        ids = batches[index]
        rule = mechanism.rule(inst.k, inst.T)
        rng = None if rule.deterministic else make_rng(seed, RULE_STREAM, int(ids[0]))
        batch = mechanism.run(rule, bids, StochasticSource(inst.ctrs, inst.T, seed, ids), rng, keep_trace=False)
        payments = np.asarray(batch.payments, dtype=float)
        return value * batch.click_counts[:, agent] - payments[:, agent]

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.concatenate(list(pool.map(run_batch, range(len(batches)))))
    return np.concatenate([run_batch(i) for i in range(len(batches))])


def ucb1_underbid_experiment(ctrs: Sequence[float], values: Sequence[float], T: int, shadings: Sequence[float],
                             trials: int, seed: int, threads: int = 1) -> UnderbidReport:
    """
    Expected utility of agent 0 under UCB1 with per-round prices when bidding s·v_0,
    the other agents bidding truthfully. Gains are paired differences against s = 1.
    """
    ctrs, values = list(ctrs), list(values)
    if len(ctrs) != len(values):
        raise ConfigurationError("Need one value per CTR")
    k = len(ctrs)
    if k > 1 and not ctrs[0] * values[0] > max(m * v for m, v in zip(ctrs[1:], values[1:])):
        raise ConfigurationError("Agent 0 must have the strictly largest μ·v")
    if any(s <= 0 for s in shadings):
        raise ConfigurationError("Shading factors must be positive")
    v_max = max(values)
    inst = StochasticInstance(k=k, T=T, ctrs=tuple(ctrs), values=tuple(values), bids=BidProfile(tuple(values)),
                              v_max=v_max, label="underbid")
    truthful = _stochastic_utilities("ucb1", inst, inst.bids, 0, trials, seed, threads)
    points = []
    for s in sorted(set(float(x) for x in shadings)):
        bid = s * values[0]
        utilities = truthful if s == 1.0 else _stochastic_utilities(
            "ucb1", inst, inst.bids.with_bid(0, bid), 0, trials, seed, threads)
        diff = utilities - truthful
        n = len(utilities)
        points.append(UnderbidPoint(
            shading=s, bid=bid, utility=float(utilities.mean()), stderr=float(utilities.std(ddof=1) / np.sqrt(n)),
            gain=float(diff.mean()), gain_stderr=float(diff.std(ddof=1) / np.sqrt(n)),
        ))
    report = UnderbidReport(points)
    logger.info(f"UCB1 underbidding: best shading {report.best_shading} gains {report.best.gain:.4f} "
                f"± {report.best.gain_stderr:.4f}")
    return report


# ----------------------------- PSim adversarial bench ----------------------------- #

def fixture_realization(pattern: str, k: int, T: int) -> Realization:
    """Named fixed click tables for adversarial benchmarks."""
    t = np.arange(T)
    bits = np.zeros((k, T), dtype=np.int8)
    if pattern == "constant_best":
        bits[0] = 1
    elif pattern == "all_zero":
        pass
    elif pattern == "alternating":
        for j in range(k):
            bits[j] = (t % k == j)
    elif pattern == "switching":
        # agent 0 clicks through the first half, agent 1 through the second
        bits[0, : T // 2] = 1
        bits[min(1, k - 1), T // 2:] = 1
    else:
        raise ConfigurationError(f"Unknown realization pattern {pattern!r}; valid: {', '.join(PATTERNS)}")
    return Realization.from_array(bits)


def psim_regret_envelope(k: int, T: int, v_max: float = 1.0) -> float:
    """(k ln k)^{1/3}·T^{2/3}·v_max."""
    return (k * math.log(k)) ** (1 / 3) * T ** (2 / 3) * v_max if k > 1 else 0.0


@dataclass(frozen=True)
class BenchRow:
    pattern: str
    k: int
    T: int
    seeds: int
    seed: int
    regret: float
    bound: float

    @property
    def constant(self) -> float:
        return self.regret / self.bound if self.bound > 0 else 0.0

    def row(self) -> dict:
        return {"pattern": self.pattern, "k": self.k, "T": self.T, "seeds": self.seeds, "seed": self.seed,
                "regret": self.regret, "bound": self.bound, "constant": self.constant}


@dataclass
class BenchReport:
    rows: List[BenchRow]
    fits: Dict[str, ScalingFit] = field(default_factory=dict)

    @property
    def calibrated_constant(self) -> float:
        return max((r.constant for r in self.rows), default=0.0)


def psim_adversarial_bench(T_values: Sequence[int], k: int, patterns: Iterable[str], seeds: int, seed: int,
                           v_max: float = 1.0) -> BenchReport:
    """Adversarial regret of PSim on fixed click tables, with the fitted growth per pattern."""
    rows = []
    values = [v_max] * k
    for pattern in patterns:
        for T in T_values:
            realization = fixture_realization(pattern, k, T)
            rule = get_rule("psim", k, T, v_max=v_max)
            regret = regret_adversarial(rule, BidProfile(tuple(values)), values, realization, seeds=seeds, seed=seed)
            rows.append(BenchRow(pattern, k, T, seeds, seed, regret, psim_regret_envelope(k, T, v_max)))
    report = BenchReport(sorted(rows, key=lambda r: (r.pattern, r.T)))
    for pattern in sorted({r.pattern for r in rows}):
        pts = [(r.T, r.regret, 0.0) for r in report.rows if r.pattern == pattern]
        try:
            report.fits[pattern] = fit_scaling(f"psim:{pattern}", pts)
        except DegenerateFitError as e:
            logger.info(f"No growth fit for {pattern}: {e.message}")
    return report


# ----------------------------- CSV output ----------------------------- #

def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.{get_settings().csv_significant_digits}g}"
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[dict]) -> str:
    """Write rows with fixed formatting and '\\n' line endings so reruns are byte-identical."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: format_cell(row[key]) for key in header})
    logger.info(f"Wrote {path}")
    return path


def write_regret_csv(path: str, points: Iterable[RegretPoint]) -> str:
    return write_csv(path, REGRET_HEADER, (p.row() for p in points))


def write_fit_csv(path: str, fits: Dict[str, ScalingFit]) -> str:
    return write_csv(path, FIT_HEADER, (fits[name].row() for name in sorted(fits)))
